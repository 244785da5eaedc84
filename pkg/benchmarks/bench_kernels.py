"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Times the batched MLE solve, kNN distances and the KDE grid on identical
inputs and checks that both backends return the same numbers.
"""
import argparse
import time

import numpy as np

from mlelab import kernels
from mlelab.engine import SeededStream
from mlelab.models import ModelSpec, ParamSet, sample
from mlelab.solver import SolverSettings, solve_batch


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    settings = SolverSettings()
    for fam in ("gaussian", "logistic", "pearson4"):
        model = ModelSpec(fam, 0.0, ParamSet(-10.0, 10.0))
        data = sample(model, SeededStream(1, 0), 200 * 100).reshape(200, 100)
        yield f"solve_batch {fam} 200x100", (
            lambda b, model=model, data=data: solve_batch(model, data, settings, b)[0])

    x = np.sort(np.random.default_rng(2).standard_normal(200_000))
    yield "knn_distances N=2e5 k=5", lambda b: kernels.get(b).knn_distances(x, 5)

    h = 0.9 * x.std() * x.size ** -0.2
    step = h / 4
    start = x[0] - 4 * h
    count = int((x[-1] + 4 * h - start) / step) + 1
    yield "kde_grid N=2e5", lambda b: kernels.get(b).kde_grid(x, h, start, step, count)[0]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    backends = [b for b in ("compiled", "python") if b in kernels.available()]
    if "compiled" not in backends:
        print("compiled backend not built; only the python backend is available")
    print(f"{'case':<32}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    for name, fn in cases():
        times, outs = [], []
        for b in backends:
            t, out = _best(lambda: fn(b), args.repeat)
            times.append(t)
            outs.append(np.asarray(out))
        row = f"{name:<32}" + "".join(f"{t:>11.4f}s" for t in times)
        if len(times) == 2:
            diff = float(np.max(np.abs(outs[0] - outs[1])))
            row += f"{times[1] / times[0]:>9.1f}x{diff:>12.2e}"
        print(row)


if __name__ == "__main__":
    main()
