"""``mlelab`` command line: ``run`` simulates and reports, ``verify`` re-checks.

Exit codes: 0 success, 1 verify found a failing criterion, 2 invalid
configuration, 3 runtime failure (partial artifacts kept), 4 cache or
config digest mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from mlelab import __version__, diagnostics, engine, kernels
from mlelab.config import ConfigError, ExperimentConfig, PRESETS, load, preset

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_RUNTIME, EXIT_MISMATCH = 0, 1, 2, 3, 4

CACHE = "zn.znmx"
REPORT_CSV = "report.csv"
REPORT_JSON = "report.json"
MANIFEST = "manifest.json"
CONFIG = "config.toml"

CRITERIA = {
    "gaussian_control": "Gaussian control exactness",
    "moments": "moment convergence",
    "subgaussian_uniformity": "sub-Gaussian uniformity",
    "entropic_smoothed": "entropic CLT, smoothed",
    "entropic_raw": "entropic CLT, unsmoothed",
    "bobkov_bound": "truncation KL bound",
    "assumptions": "assumption audits",
}

log = logging.getLogger("mlelab")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("--preset", "give either --config or --preset, not both")
    if args.config:
        cfg = load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    elif getattr(args, "out", None) and (Path(args.out) / CONFIG).exists():
        cfg = load(Path(args.out) / CONFIG)
    else:
        raise ConfigError("--config", "a config file or --preset is required")
    if args.out:
        cfg = cfg.with_output(args.out)
    return cfg


def _prepare_out(path: Path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output.dir", f"cannot create {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError("output.dir", f"{path} is not writable")


def _fmt(v, width=10, prec=4):
    if v is None:
        return "skip".rjust(width)
    return f"{v:{width}.{prec}f}"


def summary_table(report) -> str:
    head = (f"{'n':>7} {'R':>7} {'bnd_rate':>9} {'var':>8} {'C_hat':>7} "
            f"{'KL_smooth':>10} {'+-':>8} {'KL_raw':>10} {'J':>10} {'slack':>10}")
    lines = [head]
    for r in report.rows:
        sm = r.kl_smoothed
        lines.append(
            f"{r.n:>7d} {r.replicates:>7d} {r.boundary_rate:>9.4f} {r.variance:>8.4f} "
            f"{r.subgaussian.C_hat:>7.4f} {_fmt(sm and sm.value)} {_fmt(sm and sm.stderr, 8)} "
            f"{_fmt(r.kl_raw and r.kl_raw.value)} "
            f"{_fmt(r.fisher and r.fisher.standardized)} {_fmt(r.debruijn_slack)}"
        )
    return "\n".join(lines)


def write_report(out: Path, report) -> None:
    (out / REPORT_CSV).write_text(report.to_csv(), encoding="utf-8")
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False)
    (out / REPORT_JSON).write_text(text + "\n", encoding="utf-8")


def _write_manifest(out: Path, cfg: ExperimentConfig, timings: dict, status: str) -> None:
    artifacts = {name: name for name in (CONFIG, CACHE, REPORT_CSV, REPORT_JSON)
                 if (out / name).exists()}
    manifest = {
        "tool": "mlelab",
        "version": __version__,
        "backend": kernels.BACKEND,
        "status": status,
        "config_digest": cfg.digest,
        "artifacts": artifacts,
        "sha256": {name: _sha256(out / name) for name in artifacts.values()},
        "timings_seconds": {k: round(v, 3) for k, v in timings.items()},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    out = cfg.output_dir
    _prepare_out(out)
    (out / CONFIG).write_text(cfg.to_toml(), encoding="utf-8")
    timings = {}
    try:
        t0 = time.perf_counter()
        log.info("simulating %s: n_grid=%s R=%d (%s backend, %d workers)",
                 cfg.model.family.value, list(cfg.n_grid), cfg.replicates,
                 kernels.BACKEND, args.workers)
        matrix = engine.simulate_zn(
            cfg.model, cfg.n_grid, cfg.replicates, cfg.epsilon, cfg.master_seed,
            cfg.solver, workers=args.workers,
            progress=lambda j, n: log.info("  n=%d done", n),
        )
        engine.write_cache(out / CACHE, matrix, bytes.fromhex(cfg.digest))
        timings["simulate"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        report = diagnostics.build_report(matrix, cfg.model, cfg.estimator, cfg.digest,
                                          cfg.master_seed, cfg.epsilon_sweep)
        write_report(out, report)
        timings["diagnose"] = time.perf_counter() - t0
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit 3
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        _write_manifest(out, cfg, timings, "failed")
        return EXIT_RUNTIME
    _write_manifest(out, cfg, timings, "ok")
    print(summary_table(report))
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _resolve_config(args)
    out = cfg.output_dir
    try:
        manifest = json.loads((out / MANIFEST).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        log.error("cannot read %s: %s", out / MANIFEST, exc)
        return EXIT_RUNTIME
    if manifest.get("config_digest") != cfg.digest:
        log.error("config digest %s does not match the run's %s",
                  cfg.digest, manifest.get("config_digest"))
        return EXIT_MISMATCH
    cache = out / CACHE
    if not cache.exists():
        log.error("missing cache %s", cache)
        return EXIT_RUNTIME
    expected = manifest.get("sha256", {}).get(CACHE)
    if _sha256(cache) != expected:
        log.error("cache %s does not match its recorded sha256", cache)
        return EXIT_MISMATCH
    try:
        matrix, digest = engine.read_cache(cache)
    except engine.CacheError as exc:
        log.error("corrupt cache: %s", exc)
        return EXIT_MISMATCH
    if digest.hex() != cfg.digest:
        log.error("cache was produced by a different config (%s)", digest.hex())
        return EXIT_MISMATCH

    report = diagnostics.build_report(matrix, cfg.model, cfg.estimator, cfg.digest,
                                      cfg.master_seed, cfg.epsilon_sweep)
    print(summary_table(report))
    ok = True
    for key, label in CRITERIA.items():
        v = report.verdicts[key]
        tag = "N/A " if v is None else ("PASS" if v else "FAIL")
        ok &= v is not False
        print(f"{tag}  {key:<24} {label}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlelab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("run", cmd_run, "simulate, estimate and write all artifacts"),
        ("verify", cmd_verify, "recheck a finished run from its cache"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment")
        sp.add_argument("--out", help="output directory (overrides config and $MLELAB_OUT)")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker threads; results do not depend on it")
        sp.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.workers < 1:
        print("error: --workers: must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
