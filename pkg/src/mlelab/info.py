"""Sample-based estimators of entropy, KL divergence and Fisher information.

Two independent KL estimators are provided: a Kozachenko-Leonenko
nearest-neighbour entropy combined with the Gaussian cross-entropy, and a
kernel density plug-in. Uncertainties come from a grouped (delete-d)
jackknife over contiguous blocks of the input order.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.integrate import trapezoid

from mlelab import kernels

LOG_2PI = math.log(2.0 * math.pi)
JACKKNIFE_GROUPS = 20
DEFAULT_CLIP = 1e-12
MAX_GRID = 1 << 22


class Method(str, enum.Enum):
    KNN_ENTROPY = "KnnEntropy"
    KDE_PLUGIN = "KdePlugin"
    CLOSED_FORM = "ClosedForm"


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    method: Method
    stderr: float
    sample_count: int
    notes: tuple = ()
    #: leave-one-block-out values behind ``stderr``
    replicates: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.sample_count < 100:
            raise ValueError(f"sample_count must be >= 100, got {self.sample_count}")
        if not self.stderr >= 0:
            raise ValueError(f"stderr must be >= 0, got {self.stderr}")


def _as_samples(samples, minimum=100):
    x = np.asarray(samples, dtype=float).ravel()
    if x.shape[0] < minimum:
        raise ValueError(f"need at least {minimum} samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    return x


def jackknife_groups(count: int, groups: int = JACKKNIFE_GROUPS):
    """Contiguous index blocks; deleting one block is a delete-(N/groups) jackknife."""
    return np.array_split(np.arange(count), groups)


def jackknife_stderr(replicates) -> float:
    r = np.asarray(replicates, dtype=float)
    g = r.shape[0]
    return float(math.sqrt((g - 1) / g * np.sum((r - r.mean()) ** 2)))


def _break_ties(x):
    """Separate exact duplicates by deterministic 1e-12 relative offsets."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    dup = np.concatenate([[False], np.diff(xs) == 0.0])
    if not dup.any():
        return x, False
    # rank of each element inside its run of equal values
    run_start = np.maximum.accumulate(np.where(~dup, np.arange(xs.shape[0]), 0))
    rank = np.arange(xs.shape[0]) - run_start
    xs = xs + 1e-12 * np.maximum(1.0, np.abs(xs)) * rank
    out = np.empty_like(x)
    out[order] = xs
    return out, True


def _knn_entropy_sorted(xs, k, backend=None):
    n = xs.shape[0]
    eps = kernels.get(backend).knn_distances(xs, k)
    return float(special.digamma(n) - special.digamma(k) + np.mean(np.log(2.0 * eps)))


def _knn_jackknife(x, k, stat, backend=None):
    """Full-sample statistic and its grouped-jackknife stderr.

    ``stat(h, x)`` maps an entropy estimate and the samples it used to the
    reported quantity.
    """
    full = stat(_knn_entropy_sorted(np.sort(x), k, backend), x)
    reps = []
    for idx in jackknife_groups(x.shape[0]):
        keep = np.ones(x.shape[0], dtype=bool)
        keep[idx] = False
        sub = x[keep]
        reps.append(stat(_knn_entropy_sorted(np.sort(sub), k, backend), sub))
    return full, jackknife_stderr(reps), tuple(reps)


def entropy_knn(samples, k: int = 5, backend=None) -> DivergenceEstimate:
    """Kozachenko-Leonenko differential entropy (nats) of a 1-d sample."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    x = _as_samples(samples, max(100, 2 * k + 1))
    x, jittered = _break_ties(x)
    value, se, reps = _knn_jackknife(x, k, lambda h, _: h, backend)
    notes = ("ties jittered 1e-12",) if jittered else ()
    return DivergenceEstimate(value, Method.KNN_ENTROPY, se, x.shape[0], notes, reps)


def kl_to_std_normal(samples, method="knn", k: int = 5, bandwidth: float | None = None,
                     clip: float = DEFAULT_CLIP, backend=None) -> DivergenceEstimate:
    """Estimate D(p || N(0,1)) from samples of p.

    ``method="knn"`` uses ``D = -h(p) + E[X^2]/2 + log(2 pi)/2`` with the
    kNN entropy; ``method="kde"`` integrates ``p log(p/phi)`` for a Gaussian
    KDE. Values are not clipped at zero.
    """
    method = _method(method)
    x = _as_samples(samples)
    if method is Method.KNN_ENTROPY:
        x, jittered = _break_ties(x)

        def stat(h, xs):
            return -h + 0.5 * float(np.mean(xs * xs)) + 0.5 * LOG_2PI

        value, se, reps = _knn_jackknife(x, k, stat, backend)
        notes = ("ties jittered 1e-12",) if jittered else ()
        return DivergenceEstimate(value, method, se, x.shape[0], notes, reps)
    if method is Method.KDE_PLUGIN:
        dens = kde(x, bandwidth, backend=backend)
        value, se, reps = dens.jackknife(lambda d: _kl_grid(d, clip), with_replicates=True)
        return DivergenceEstimate(value, method, se, x.shape[0], (), reps)
    raise ValueError("closed-form KL needs a distribution, not samples")


def _method(method):
    aliases = {"knn": Method.KNN_ENTROPY, "kde": Method.KDE_PLUGIN}
    if isinstance(method, Method):
        return method
    if method in aliases:
        return aliases[method]
    return Method(method)


def gaussian_kl(mu: float, sigma2: float) -> float:
    """Closed-form D(N(mu, sigma2) || N(0, 1))."""
    return 0.5 * (sigma2 + mu * mu - 1.0 - math.log(sigma2))


def gaussian_kl_estimate(mu, sigma2, sample_count=100) -> DivergenceEstimate:
    return DivergenceEstimate(gaussian_kl(mu, sigma2), Method.CLOSED_FORM, 0.0, sample_count)


def silverman_bandwidth(x) -> float:
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.shape[0] ** (-0.2)


@dataclass
class KdeDensity:
    """A density tabulated on a uniform grid, with its derivative.

    Built by :func:`kde` from samples, or by :meth:`analytic` from exact
    formulas. Sample-built densities keep per-block partial densities so
    grid functionals can be jackknifed without re-evaluating kernels.
    """

    start: float
    step: float
    values: np.ndarray
    derivs: np.ndarray
    centers: np.ndarray | None = None
    bandwidth: float = math.nan
    _parts: list = field(default_factory=list, repr=False)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def grid(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)

    @property
    def stop(self) -> float:
        return self.start + self.step * (self.count - 1)

    @classmethod
    def analytic(cls, pdf, dpdf, lo, hi, step):
        count = int(math.ceil((hi - lo) / step)) + 1
        z = lo + step * np.arange(count)
        return cls(lo, step, np.asarray(pdf(z), float), np.asarray(dpdf(z), float))

    def with_values(self, values, derivs):
        return KdeDensity(self.start, self.step, values, derivs, self.centers, self.bandwidth)

    def integrate(self, f) -> float:
        return float(trapezoid(f, dx=self.step))

    def mass(self) -> float:
        return self.integrate(self.values)

    def mean(self) -> float:
        return self.integrate(self.grid * self.values) / self.mass()

    def variance(self) -> float:
        z = self.grid
        m = self.mean()
        return self.integrate((z - m) ** 2 * self.values) / self.mass()

    def pdf(self, z):
        """Exact kernel sum at arbitrary points (sample-built densities only)."""
        u = (np.atleast_1d(np.asarray(z, float))[:, None] - self.centers[None, :]) / self.bandwidth
        k = np.exp(-0.5 * u * u).sum(axis=1)
        out = k / (self.centers.shape[0] * self.bandwidth * math.sqrt(2.0 * math.pi))
        return out if np.ndim(z) else float(out[0])

    def dpdf(self, z):
        u = (np.atleast_1d(np.asarray(z, float))[:, None] - self.centers[None, :]) / self.bandwidth
        k = (-u * np.exp(-0.5 * u * u)).sum(axis=1)
        out = k / (self.centers.shape[0] * self.bandwidth**2 * math.sqrt(2.0 * math.pi))
        return out if np.ndim(z) else float(out[0])

    def jackknife(self, functional, with_replicates=False):
        """Value of ``functional(density)`` and its grouped-jackknife stderr."""
        full = float(functional(self))
        if not self._parts:
            return (full, 0.0, ()) if with_replicates else (full, 0.0)
        n = sum(c for c, _, _ in self._parts)
        reps = []
        for c, pv, pd in self._parts:
            w = n - c
            vals = (n * self.values - c * pv) / w
            ders = (n * self.derivs - c * pd) / w
            reps.append(float(functional(self.with_values(np.maximum(vals, 0.0), ders))))
        if with_replicates:
            return full, jackknife_stderr(reps), tuple(reps)
        return full, jackknife_stderr(reps)


def kde(samples, bandwidth: float | None = None, groups: int = JACKKNIFE_GROUPS,
        backend=None) -> KdeDensity:
    """Gaussian KDE on a grid over ``[min - 4h, max + 4h]`` with step <= h/4."""
    x = _as_samples(samples)
    if not np.std(x) > 0:
        raise ValueError("zero-variance sample")
    h = float(bandwidth) if bandwidth else silverman_bandwidth(x)
    if not h > 0:
        raise ValueError(f"bandwidth must be > 0, got {h}")
    lo, hi = float(x.min()) - 4.0 * h, float(x.max()) + 4.0 * h
    count = int(math.ceil((hi - lo) / (0.25 * h))) + 1
    if count > MAX_GRID:
        raise ValueError(f"KDE grid of {count} points exceeds {MAX_GRID}")
    step = (hi - lo) / (count - 1)
    impl = kernels.get(backend)
    n = x.shape[0]
    values = np.zeros(count)
    derivs = np.zeros(count)
    parts = []
    for idx in jackknife_groups(n, groups):
        c = idx.shape[0]
        pv, pd = impl.kde_grid(np.sort(x[idx]), h, lo, step, count)
        parts.append((c, pv, pd))
        values += (c / n) * pv
        derivs += (c / n) * pd
    return KdeDensity(lo, step, values, derivs, np.sort(x), h, parts)


def _phi(z):
    return np.exp(-0.5 * z * z - 0.5 * LOG_2PI)


def _kl_grid(d: KdeDensity, clip: float) -> float:
    z = d.grid
    p = d.values
    live = p > clip
    integrand = np.zeros_like(p)
    integrand[live] = p[live] * (np.log(p[live]) + 0.5 * z[live] ** 2 + 0.5 * LOG_2PI)
    return d.integrate(integrand)


@dataclass(frozen=True)
class DensityFisher:
    information: float
    standardized: float
    variance: float
    clip: float
    information_stderr: float = 0.0
    standardized_stderr: float = 0.0
    standardized_replicates: tuple = field(default=(), repr=False, compare=False)


def _fisher_grid(d: KdeDensity, clip: float):
    info = d.integrate(d.derivs**2 / np.maximum(d.values, clip))
    var = d.variance()
    return info, var * info - 1.0, var


def density_fisher_information(density: KdeDensity, clip: float = DEFAULT_CLIP) -> DensityFisher:
    """``I = int p'^2 / max(p, clip)`` and the standardized ``J = var * I - 1``."""
    if not clip > 0:
        raise ValueError(f"clip must be > 0, got {clip}")
    info, j, var = _fisher_grid(density, clip)
    _, se_i = density.jackknife(lambda d: _fisher_grid(d, clip)[0])
    _, se_j, reps = density.jackknife(lambda d: _fisher_grid(d, clip)[1], with_replicates=True)
    return DensityFisher(info, j, var, clip, se_i, se_j, reps)


def empirical_cf(samples, omega_grid) -> np.ndarray:
    """``(1/N) sum_j exp(-2 pi i omega z_j)`` at every omega."""
    z = np.asarray(samples, dtype=float).ravel()
    w = np.asarray(omega_grid, dtype=float).ravel()
    if not np.all(np.isfinite(w)):
        raise ValueError("omega grid must be finite")
    re = np.zeros(w.shape[0])
    im = np.zeros(w.shape[0])
    chunk = max(1, 2_000_000 // max(1, w.shape[0]))
    for s in range(0, z.shape[0], chunk):
        ang = 2.0 * np.pi * np.outer(z[s:s + chunk], w)
        re += np.cos(ang).sum(axis=0)
        im -= np.sin(ang).sum(axis=0)
    out = (re + 1j * im) / z.shape[0]
    mod = np.abs(out)
    over = mod > 1.0
    # rounding can push |cf| a few ulps past 1; shrink those points onto the disc
    out[over] *= (1.0 - 4.0 * np.finfo(float).eps) / mod[over]
    return out


@dataclass(frozen=True)
class BobkovBoundReport:
    T: float
    term_exp: float
    term_central: float
    term_tail_second_moment: float
    term_tail_entropy: float
    total: float
    tail_mass_empirical: float = math.nan


def _extend(d: KdeDensity, lo, hi):
    left = max(0, int(math.ceil((d.start - lo) / d.step)))
    right = max(0, int(math.ceil((hi - d.stop) / d.step)))
    if left == 0 and right == 0:
        return d
    vals = np.concatenate([np.zeros(left), d.values, np.zeros(right)])
    ders = np.concatenate([np.zeros(left), d.derivs, np.zeros(right)])
    return KdeDensity(d.start - left * d.step, d.step, vals, ders, d.centers, d.bandwidth)


def bobkov_bound(density: KdeDensity, T: float, samples=None,
                 clip: float = DEFAULT_CLIP) -> BobkovBoundReport:
    """Upper bound on D(p || N(0,1)) from a truncation level ``T``.

    The four terms are ``exp(-T^2/2)``,
    ``sqrt(2 pi) int_{|z|<=T} (p - phi)^2 exp(z^2/2)``,
    ``(1/2) int_{|z|>=T} z^2 p`` and ``int_{|z|>=T} p log p``, each by grid
    quadrature. Grid points outside the tabulated range count as zero density.
    """
    if not T > 0:
        raise ValueError(f"T must be > 0, got {T}")
    d = _extend(density, -T, T)
    z = d.grid
    p = d.values
    # fraction of each node's cell lying in [-T, T]; a hard mask would leave
    # an O(step) error at the cut
    w_in = np.clip((T - np.abs(z)) / d.step + 0.5, 0.0, 1.0)
    w_out = 1.0 - w_in
    term_exp = math.exp(-0.5 * T * T)
    diff = p - _phi(z)
    central = math.sqrt(2.0 * math.pi) * d.integrate(w_in * diff * diff * np.exp(0.5 * z * z))
    tail2 = 0.5 * d.integrate(w_out * z * z * p)
    live = (w_out > 0) & (p > clip)
    ent = np.zeros_like(p)
    ent[live] = w_out[live] * p[live] * np.log(p[live])
    tail_ent = d.integrate(ent)
    tail_mass = math.nan
    if samples is not None:
        s = np.asarray(samples, dtype=float)
        tail_mass = float(np.mean(np.abs(s) >= T))
    total = term_exp + central + tail2 + tail_ent
    return BobkovBoundReport(float(T), term_exp, central, tail2, tail_ent, total, tail_mass)
