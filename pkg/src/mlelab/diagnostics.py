"""Convergence diagnostics computed from a :class:`~mlelab.engine.ZnMatrix`.

Per sample size the report carries absolute moments against their
Gaussian targets, a sub-Gaussian constant, KL divergences of the smoothed
and raw normalized errors, the density Fisher information of the raw
error, the truncation KL bound and the de Bruijn slack. Verdicts are pure
functions of those rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from mlelab import info, models
from mlelab.engine import SeededStream, ZnMatrix, smooth
from mlelab.models import Family, ModelSpec

ORDERS = tuple(range(1, 9))
TAIL_THRESHOLDS = (1.0, 1.5, 2.0, 2.5, 3.0)
CLIP_SWEEP = (1e-10, 1e-12, 1e-14)
SKIP = "skip"


def gaussian_abs_moment(m: float) -> float:
    """E|Z|^m for Z ~ N(0, 1)."""
    return 2.0 ** (m / 2.0) * math.gamma((m + 1.0) / 2.0) / math.sqrt(math.pi)


@dataclass(frozen=True)
class EstimatorSettings:
    k: int = 5
    clip: float = info.DEFAULT_CLIP
    bandwidth: float | None = None
    bobkov_T: float = 4.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.clip > 0:
            raise ValueError(f"clip must be > 0, got {self.clip}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if not self.bobkov_T > 0:
            raise ValueError(f"bobkov_T must be > 0, got {self.bobkov_T}")


@dataclass(frozen=True)
class MomentTable:
    n: int
    moments: dict
    stderr: dict
    gaussian_targets: dict


def _column(column, minimum, strict):
    x = np.asarray(column, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if strict and x.shape[0] < minimum:
        raise ValueError(f"column needs at least {minimum} values, got {x.shape[0]}")
    return x


def moment_table(column, n: int, strict: bool = True) -> MomentTable:
    """Empirical E|Z_n|^m, m = 1..8, with jackknife standard errors.

    The delete-1 jackknife of a sample mean is ``sd / sqrt(N)`` exactly.
    """
    x = _column(column, 1000, strict)
    a = np.abs(x)
    moments, stderr = {}, {}
    for m in ORDERS:
        v = a**m
        moments[m] = float(v.mean())
        stderr[m] = float(v.std(ddof=1) / math.sqrt(v.shape[0]))
    targets = {m: gaussian_abs_moment(m) for m in ORDERS}
    return MomentTable(int(n), moments, stderr, targets)


@dataclass(frozen=True)
class SubGaussianFit:
    n: int
    C_hat: float
    C_stderr: float
    ratios: dict
    tail_ratio_curve: dict


def _c_hat(a):
    return max(float(np.mean(a**m)) ** (1.0 / m) / math.sqrt(m) for m in ORDERS)


def subgaussian_fit(column, n: int, strict: bool = True) -> SubGaussianFit:
    """Smallest C with (E|Z_n|^m)^(1/m) <= C sqrt(m) for m = 1..8.

    ``tail_ratio_curve[t]`` is ``log P(|Z_n| > t) / (-t^2/2)`` (NaN when no
    sample exceeds ``t``).
    """
    x = _column(column, 10_000, strict)
    a = np.abs(x)
    ratios = {m: float(np.mean(a**m)) ** (1.0 / m) / math.sqrt(m) for m in ORDERS}
    c_hat = max(ratios.values())
    reps = []
    for idx in info.jackknife_groups(a.shape[0]):
        keep = np.ones(a.shape[0], dtype=bool)
        keep[idx] = False
        reps.append(_c_hat(a[keep]))
    tails = {}
    for t in TAIL_THRESHOLDS:
        surv = float(np.mean(a > t))
        tails[t] = math.log(surv) / (-0.5 * t * t) if surv > 0 else math.nan
    return SubGaussianFit(int(n), c_hat, info.jackknife_stderr(reps), ratios, tails)


@dataclass
class ConvergenceRow:
    n: int
    replicates: int
    failures: int
    boundary_hits: int
    boundary_rate: float
    variance: float
    variance_stderr: float
    normality_pvalue: float
    moments: MomentTable
    subgaussian: SubGaussianFit
    kl_smoothed: info.DivergenceEstimate | None
    kl_smoothed_kde: info.DivergenceEstimate | None
    kl_raw: info.DivergenceEstimate | None = None
    kl_raw_kde: info.DivergenceEstimate | None = None
    fisher: info.DensityFisher | None = None
    max_abs_density_deriv: float = math.nan
    bobkov: info.BobkovBoundReport | None = None
    debruijn_slack: float | None = None
    debruijn_stderr: float | None = None
    notes: list = field(default_factory=list)

    @property
    def raw_estimable(self) -> bool:
        return self.kl_raw is not None


def _normality_pvalue(x):
    from statsmodels.stats.diagnostic import normal_ad

    return float(normal_ad(x)[1])


def _variance_and_se(x):
    var = float(np.var(x, ddof=1))
    c = x - x.mean()
    m4 = float(np.mean(c**4))
    return var, math.sqrt(max(m4 - var * var, 0.0) / x.shape[0])


def _try(fn, notes, label):
    try:
        return fn()
    except (ValueError, FloatingPointError) as exc:
        notes.append(f"{label}: {exc}")
        return None


def _debruijn(eps, kl_raw, kl_sm, fisher):
    slack = eps * fisher.standardized / 2.0 - (kl_raw.value - kl_sm.value)
    reps_raw, reps_sm, reps_j = kl_raw.replicates, kl_sm.replicates, fisher.standardized_replicates
    if len(reps_raw) == len(reps_sm) == len(reps_j) and len(reps_raw) > 1:
        reps = [eps * j / 2.0 - (r - s) for r, s, j in zip(reps_raw, reps_sm, reps_j)]
        se = info.jackknife_stderr(reps)
    else:
        se = math.sqrt(kl_raw.stderr**2 + kl_sm.stderr**2 + (eps * fisher.standardized_stderr / 2) ** 2)
    return slack, se


def analyse_column(raw, smoothed, n, epsilon, boundary_hits, failures,
                   settings: EstimatorSettings) -> ConvergenceRow:
    """All per-n diagnostics for one column of the matrix."""
    raw = np.asarray(raw, dtype=float)
    smoothed = np.asarray(smoothed, dtype=float)
    notes = []
    R = raw.shape[0]
    var, var_se = _variance_and_se(raw)
    row = ConvergenceRow(
        n=int(n), replicates=R, failures=int(failures), boundary_hits=int(boundary_hits),
        boundary_rate=boundary_hits / R if R else math.nan,
        variance=var, variance_stderr=var_se,
        normality_pvalue=_normality_pvalue(raw),
        moments=moment_table(raw, n, strict=False),
        subgaussian=subgaussian_fit(raw, n, strict=False),
        kl_smoothed=_try(lambda: info.kl_to_std_normal(smoothed, "knn", k=settings.k), notes, "kl_smoothed"),
        kl_smoothed_kde=_try(lambda: info.kl_to_std_normal(
            smoothed, "kde", bandwidth=settings.bandwidth, clip=settings.clip), notes, "kl_smoothed_kde"),
        notes=notes,
    )
    if boundary_hits > 0:
        notes.append("raw column has boundary atoms: not absolutely continuous, raw KL skipped")
        return row
    row.kl_raw = _try(lambda: info.kl_to_std_normal(raw, "knn", k=settings.k), notes, "kl_raw")
    row.kl_raw_kde = _try(lambda: info.kl_to_std_normal(
        raw, "kde", bandwidth=settings.bandwidth, clip=settings.clip), notes, "kl_raw_kde")
    dens = _try(lambda: info.kde(raw, settings.bandwidth), notes, "kde")
    if dens is not None:
        row.fisher = info.density_fisher_information(dens, settings.clip)
        row.max_abs_density_deriv = float(np.max(np.abs(dens.derivs)))
        row.bobkov = info.bobkov_bound(dens, settings.bobkov_T, raw, settings.clip)
    if row.kl_raw is not None and row.kl_smoothed is not None and row.fisher is not None and epsilon > 0:
        row.debruijn_slack, row.debruijn_stderr = _debruijn(
            epsilon, row.kl_raw, row.kl_smoothed, row.fisher)
    return row


def entropic_curve(matrix: ZnMatrix, settings: EstimatorSettings | None = None):
    """One :class:`ConvergenceRow` per sample size, sorted by n."""
    settings = settings or EstimatorSettings()
    rows = []
    for j in np.argsort(matrix.n_grid, kind="stable"):
        rows.append(analyse_column(
            matrix.column(j), matrix.smoothed_column(j), int(matrix.n_grid[j]),
            matrix.epsilon, matrix.boundary_hits(j), matrix.failures(j), settings,
        ))
    return rows


def debruijn_gap(matrix: ZnMatrix, settings: EstimatorSettings | None = None):
    """Per-n ``(slack, stderr)`` or ``None`` where the raw KL is skipped.

    ``slack = eps J(Z_n)/2 - (D(Z_n||Z) - D(Z~_n||Z))``.
    """
    return [
        None if r.debruijn_slack is None else (r.debruijn_slack, r.debruijn_stderr)
        for r in entropic_curve(matrix, settings)
    ]


def epsilon_sweep(matrix: ZnMatrix, epsilons, master_seed: int, k: int = 5):
    """KL of re-smoothed raw columns for each extra epsilon.

    Smoothing noise comes from dedicated streams (``stream_id = 2**40 + i``)
    so the sweep is reproducible and independent of the main smoothing.
    """
    out = {}
    for i, eps in enumerate(epsilons):
        rows = []
        for j in np.argsort(matrix.n_grid, kind="stable"):
            col = smooth(matrix.column(j), float(eps), SeededStream(master_seed, 2**40 + i, int(j)))
            try:
                est = info.kl_to_std_normal(col, "knn", k=k)
                rows.append({"n": int(matrix.n_grid[j]), "kl": est.value, "stderr": est.stderr})
            except ValueError:
                rows.append({"n": int(matrix.n_grid[j]), "kl": None, "stderr": None})
        out[float(eps)] = rows
    return out


@dataclass
class AssumptionAudit:
    family: str
    envelope_bound: float
    envelope_bounded: bool
    score_grid_sup: float
    score_deriv_grid_sup: float
    score_fd_max_error: float
    deriv_fd_max_error: float
    fd_tolerance: float
    subexp_ratios: dict
    subexp_norm: float
    per_n: list

    @property
    def envelope_ok(self) -> bool:
        return (not self.envelope_bounded) or self.score_grid_sup <= self.envelope_bound

    @property
    def fd_ok(self) -> bool:
        return self.score_fd_max_error <= 1.0 and self.deriv_fd_max_error <= 1.0


def _x_range(model, half_width=20.0):
    if model.family is Family.CAUCHY_SCALE:
        return -half_width * model.K.hi, half_width * model.K.hi
    s = model.sigma
    return model.K.lo - half_width * s, model.K.hi + half_width * s


def score_grid_sup(model: ModelSpec, points: int = 200):
    """Max of |s_theta(x)| and |s'_theta(x)| over a points x points (theta, x) grid."""
    thetas = np.linspace(model.K.lo, model.K.hi, points)
    xs = np.linspace(*_x_range(model), points)
    sup_s = sup_ds = 0.0
    for t in thetas:
        ev = models.score(model, float(t), xs)
        sup_s = max(sup_s, float(np.max(np.abs(ev.value))))
        sup_ds = max(sup_ds, float(np.max(np.abs(ev.deriv))))
    return sup_s, sup_ds


def finite_difference_errors(model: ModelSpec, points: int = 10, rel: float = 1e-6):
    """Largest normalized error of the score and its derivative against
    central differences on a points x points (theta, x) grid.

    Errors are divided by ``rel * (1 + |analytic|)``, so values <= 1 pass.
    """
    lo, hi = model.K.lo, model.K.hi
    pad = 0.05 * (hi - lo)
    thetas = np.linspace(lo + pad, hi - pad, points)
    xs = np.linspace(*_x_range(model, 5.0), points)
    worst_s = worst_d = 0.0
    for t in thetas:
        t = float(t)
        h = 1e-5 * max(1.0, abs(t))
        ev = models.score(model, t, xs)
        fd_s = (models.log_pdf(model, t + h, xs) - models.log_pdf(model, t - h, xs)) / (2 * h)
        fd_d = (models.score(model, t + h, xs).value - models.score(model, t - h, xs).value) / (2 * h)
        worst_s = max(worst_s, float(np.max(np.abs(ev.value - fd_s) / (rel * (1 + np.abs(ev.value))))))
        worst_d = max(worst_d, float(np.max(np.abs(ev.deriv - fd_d) / (rel * (1 + np.abs(ev.deriv))))))
    return worst_s, worst_d


def assumption_audit(model: ModelSpec, matrix: ZnMatrix | None = None,
                     settings: EstimatorSettings | None = None, master_seed: int = 0,
                     draws: int = 100_000) -> AssumptionAudit:
    """Numeric checks of the envelope, score-derivative tail and density smoothness."""
    settings = settings or EstimatorSettings()
    bound = models.lipschitz_bound(model)
    sup_s, sup_ds = score_grid_sup(model)
    fd_s, fd_d = finite_difference_errors(model)

    x = models.sample(model, SeededStream(master_seed, 2**41), draws)
    a = np.abs(models.score(model, model.theta0, x).deriv)
    ratios = {m: float(np.mean(a**m)) ** (1.0 / m) / m for m in ORDERS}

    per_n = []
    if matrix is not None:
        for j in np.argsort(matrix.n_grid, kind="stable"):
            col = matrix.column(j)
            entry = {"n": int(matrix.n_grid[j]), "atoms": matrix.boundary_hits(j) > 0}
            try:
                dens = info.kde(col, settings.bandwidth)
                entry["fisher_I"] = {c: info.density_fisher_information(dens, c).information
                                     for c in CLIP_SWEEP}
                entry["max_abs_deriv"] = float(np.max(np.abs(dens.derivs)))
            except ValueError as exc:
                entry["error"] = str(exc)
            per_n.append(entry)

    return AssumptionAudit(
        family=model.family.value, envelope_bound=bound, envelope_bounded=math.isfinite(bound),
        score_grid_sup=sup_s, score_deriv_grid_sup=sup_ds,
        score_fd_max_error=fd_s, deriv_fd_max_error=fd_d, fd_tolerance=1e-6,
        subexp_ratios=ratios, subexp_norm=max(ratios.values()), per_n=per_n,
    )


# Verdicts ------------------------------------------------------------------

def verdict_gaussian_control(rows, family):
    """Control family only: unit variance, zero KL, normality at level 0.001."""
    if family != Family.GAUSSIAN.value:
        return None
    for r in rows:
        if abs(r.variance - 1.0) > 0.02:
            return False
        if r.kl_raw is None or abs(r.kl_raw.value) > 0.02:
            return False
        if not r.normality_pvalue >= 1e-3:
            return False
    return True


def verdict_moments(rows, orders=(1, 2, 3, 4)):
    last = rows[-1].moments
    return all(
        abs(last.moments[m] - last.gaussian_targets[m])
        <= max(0.1 * last.gaussian_targets[m], 4 * last.stderr[m])
        for m in orders
    )


def verdict_subgaussian(rows):
    c = [r.subgaussian.C_hat for r in rows]
    if not all(math.isfinite(v) and v > 0 for v in c):
        return False
    return max(c) / min(c) <= 2.0 and max(c) <= 3.0


def _non_increasing(values, errors, k=3.0):
    return all(
        b <= a + k * math.hypot(ea, eb)
        for (a, ea), (b, eb) in zip(zip(values, errors), zip(values[1:], errors[1:]))
    )


def verdict_entropic_smoothed(rows, final_max=0.05):
    ests = [r.kl_smoothed for r in rows]
    if any(e is None for e in ests):
        return False
    vals = [e.value for e in ests]
    errs = [e.stderr for e in ests]
    return _non_increasing(vals, errs) and vals[-1] <= final_max


def verdict_entropic_raw(rows, final_max=0.08):
    """Applicable only when the largest-n raw column is estimable."""
    if not rows[-1].raw_estimable:
        return None
    if rows[-1].kl_raw.value > final_max:
        return False
    for r in rows:
        if r.debruijn_slack is not None and r.debruijn_slack < -3 * r.debruijn_stderr:
            return False
    return True


def verdict_bobkov(rows):
    checked = [r for r in rows if r.bobkov is not None and r.kl_raw_kde is not None]
    if not checked:
        return None
    return all(r.bobkov.total >= r.kl_raw_kde.value - 3 * r.kl_raw_kde.stderr for r in checked)


def verdict_assumptions(audit: AssumptionAudit | None):
    if audit is None:
        return None
    return audit.envelope_ok and audit.fd_ok


def verdicts(rows, family, audit=None) -> dict:
    return {
        "gaussian_control": verdict_gaussian_control(rows, family),
        "moments": verdict_moments(rows),
        "subgaussian_uniformity": verdict_subgaussian(rows),
        "entropic_smoothed": verdict_entropic_smoothed(rows),
        "entropic_raw": verdict_entropic_raw(rows),
        "bobkov_bound": verdict_bobkov(rows),
        "assumptions": verdict_assumptions(audit),
    }


# Report --------------------------------------------------------------------

CSV_COLUMNS = (
    ["n", "replicates", "boundary_rate"]
    + [f"m{m}" for m in ORDERS]
    + [f"m_stderr{m}" for m in ORDERS]
    + ["C_hat", "kl_smoothed", "kl_smoothed_stderr", "kl_raw", "fisher_I", "fisher_J",
       "bobkov_total", "debruijn_slack"]
)


@dataclass
class ConvergenceReport:
    config_digest: str
    model: dict
    epsilon: float
    rows: list
    verdicts: dict
    audit: AssumptionAudit | None = None
    sweep: dict = field(default_factory=dict)

    def csv_rows(self):
        for r in self.rows:
            yield [
                r.n, r.replicates, r.boundary_rate,
                *(r.moments.moments[m] for m in ORDERS),
                *(r.moments.stderr[m] for m in ORDERS),
                r.subgaussian.C_hat,
                _val(r.kl_smoothed), _se(r.kl_smoothed),
                _val(r.kl_raw),
                SKIP if r.fisher is None else r.fisher.information,
                SKIP if r.fisher is None else r.fisher.standardized,
                SKIP if r.bobkov is None else r.bobkov.total,
                SKIP if r.debruijn_slack is None else r.debruijn_slack,
            ]

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for row in self.csv_rows():
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return _clean({
            "config_digest": self.config_digest,
            "model": self.model,
            "epsilon": self.epsilon,
            "rows": [_row_dict(r) for r in self.rows],
            "verdicts": self.verdicts,
            "audit": None if self.audit is None else _audit_dict(self.audit),
            "epsilon_sweep": {repr(k): v for k, v in self.sweep.items()},
        })


def build_report(matrix: ZnMatrix, model: ModelSpec, settings: EstimatorSettings | None = None,
                 config_digest: str = "", master_seed: int = 0, sweep=(),
                 audit: bool = True) -> ConvergenceReport:
    settings = settings or EstimatorSettings()
    rows = entropic_curve(matrix, settings)
    aud = assumption_audit(model, matrix, settings, master_seed) if audit else None
    sw = epsilon_sweep(matrix, sweep, master_seed, settings.k) if sweep else {}
    return ConvergenceReport(
        config_digest, model.describe(), matrix.epsilon, rows,
        verdicts(rows, model.family.value, aud), aud, sw,
    )


def _val(est):
    return SKIP if est is None else est.value


def _se(est):
    return SKIP if est is None else est.stderr


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _est_dict(e):
    if e is None:
        return SKIP
    return {"value": e.value, "stderr": e.stderr, "method": e.method.value,
            "sample_count": e.sample_count, "notes": list(e.notes)}


def _row_dict(r: ConvergenceRow) -> dict:
    return {
        "n": r.n,
        "replicates": r.replicates,
        "failures": r.failures,
        "boundary_hits": r.boundary_hits,
        "boundary_rate": r.boundary_rate,
        "variance": {"value": r.variance, "stderr": r.variance_stderr},
        "normality_pvalue": r.normality_pvalue,
        "moments": {str(m): {"value": r.moments.moments[m], "stderr": r.moments.stderr[m],
                             "gaussian": r.moments.gaussian_targets[m]} for m in ORDERS},
        "subgaussian": {"C_hat": r.subgaussian.C_hat, "stderr": r.subgaussian.C_stderr,
                        "tail_ratio_curve": {repr(t): v for t, v in r.subgaussian.tail_ratio_curve.items()}},
        "kl_smoothed": _est_dict(r.kl_smoothed),
        "kl_smoothed_kde": _est_dict(r.kl_smoothed_kde),
        "kl_raw": _est_dict(r.kl_raw),
        "kl_raw_kde": _est_dict(r.kl_raw_kde),
        "fisher": SKIP if r.fisher is None else {
            "I": r.fisher.information, "I_stderr": r.fisher.information_stderr,
            "J": r.fisher.standardized, "J_stderr": r.fisher.standardized_stderr,
            "variance": r.fisher.variance, "clip": r.fisher.clip,
            "max_abs_deriv": r.max_abs_density_deriv},
        "bobkov": SKIP if r.bobkov is None else {
            "T": r.bobkov.T, "exp": r.bobkov.term_exp, "central": r.bobkov.term_central,
            "tail_second_moment": r.bobkov.term_tail_second_moment,
            "tail_entropy": r.bobkov.term_tail_entropy, "total": r.bobkov.total},
        "debruijn": SKIP if r.debruijn_slack is None else {
            "slack": r.debruijn_slack, "stderr": r.debruijn_stderr},
        "notes": list(r.notes),
    }


def _audit_dict(a: AssumptionAudit) -> dict:
    return {
        "family": a.family,
        "envelope_bound": a.envelope_bound if a.envelope_bounded else "unbounded",
        "score_grid_sup": a.score_grid_sup,
        "score_deriv_grid_sup": a.score_deriv_grid_sup,
        "score_fd_max_error": a.score_fd_max_error,
        "deriv_fd_max_error": a.deriv_fd_max_error,
        "subexp_ratios": {str(k): v for k, v in a.subexp_ratios.items()},
        "subexp_norm": a.subexp_norm,
        "per_n": [{**e, "fisher_I": {repr(c): v for c, v in e.get("fisher_I", {}).items()}}
                  for e in a.per_n],
        "envelope_ok": a.envelope_ok,
        "fd_ok": a.fd_ok,
    }


def _clean(obj):
    """JSON-safe copy: non-finite floats become None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
