"""Parametric families with a scalar parameter.

Four families are provided behind one interface: Gaussian location (the
exact-normality control), Pearson type IV location, logistic location and
Cauchy scale. Each family supplies its log-density, the score and its
theta-derivative, an exact sampler, Fisher information by quadrature, and
the closed-form uniform bound on ``|score|`` that serves as the Lipschitz
envelope of the log-likelihood.

All evaluation functions accept scalars or numpy arrays for ``x``.
"""
from __future__ import annotations

import enum
import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from mlelab import _pykernels as _k

#: theta may leave K by this much (solver clamp round-off)
THETA_SLACK = 1e-12


class DomainError(ValueError):
    """Parameter outside K or shape constants outside their valid range."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    PEARSON4 = "pearson4"
    LOGISTIC = "logistic"
    CAUCHY_SCALE = "cauchy_scale"

    @property
    def code(self) -> int:
        return _CODES[self]

    @property
    def is_location(self) -> bool:
        return self is not Family.CAUCHY_SCALE


_CODES = {
    Family.GAUSSIAN: _k.GAUSSIAN,
    Family.PEARSON4: _k.PEARSON4,
    Family.LOGISTIC: _k.LOGISTIC,
    Family.CAUCHY_SCALE: _k.CAUCHY_SCALE,
}


@dataclass(frozen=True)
class ParamSet:
    """Compact parameter interval ``K = [lo, hi]``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise DomainError(f"K must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise DomainError(f"K requires lo < hi, got [{self.lo}, {self.hi}]")

    def contains(self, theta: float, slack: float = THETA_SLACK) -> bool:
        return self.lo - slack <= theta <= self.hi + slack

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class ScoreEval:
    value: np.ndarray | float
    deriv: np.ndarray | float


@functools.lru_cache(maxsize=64)
def pearson_log_normalizer(m: float, nu: float, sigma: float) -> float:
    """log of the Pearson IV normalizing constant, by quadrature.

    With ``x - theta = sigma * tan(t)`` the unnormalized mass is
    ``sigma * int cos(t)**(2m-2) exp(nu t) dt`` over ``(-pi/2, pi/2)``; the
    algebraic endpoint behaviour is handled by an ``alg`` quadrature weight.
    """
    a = 2.0 * m - 2.0
    half = 0.5 * np.pi

    def smooth(t):
        # cos(t) / ((t + pi/2)(pi/2 - t)) is smooth and positive on the closed interval
        d = (t + half) * (half - t)
        r = np.cos(t) / d if d > 0 else 1.0 / np.pi
        return r**a * np.exp(nu * t)

    val, err, *rest = integrate.quad(
        smooth, -half, half, weight="alg", wvar=(a, a),
        epsabs=0.0, epsrel=1e-13, limit=200, full_output=1,
    )
    if len(rest) > 1 and err > 1e-10 * abs(val):
        raise QuadratureError(f"Pearson IV normalizer: {rest[1]} (abserr {err:.3g})")
    return -math.log(sigma * val)


@dataclass(frozen=True)
class ModelSpec:
    """A family, its shape constants, the true parameter and the set K.

    ``sigma`` is the scale of the location families (ignored for the Cauchy
    scale family); ``m`` and ``nu`` are the Pearson IV shape constants.
    """

    family: Family
    theta0: float
    K: ParamSet
    sigma: float = 1.0
    m: float = 1.0
    nu: float = 0.0
    log_norm: float = field(default=0.0, init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if isinstance(self.K, (tuple, list)):
            object.__setattr__(self, "K", ParamSet(*map(float, self.K)))
        fam = self.family
        if fam is not Family.CAUCHY_SCALE and not self.sigma > 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if fam is Family.PEARSON4:
            if not self.m > 0.5:
                raise DomainError(f"Pearson IV requires m > 1/2, got {self.m}")
            if not math.isfinite(self.nu):
                raise DomainError(f"nu must be finite, got {self.nu}")
            object.__setattr__(
                self, "log_norm", pearson_log_normalizer(self.m, self.nu, self.sigma)
            )
        if fam is Family.CAUCHY_SCALE and not self.K.lo > 0:
            raise DomainError(f"scale family requires K.lo > 0, got {self.K.lo}")
        if not self.K.lo < self.theta0 < self.K.hi:
            raise DomainError(
                f"theta0={self.theta0} must lie strictly inside K=[{self.K.lo}, {self.K.hi}]"
            )

    @property
    def code(self) -> int:
        return self.family.code

    @property
    def params(self) -> tuple:
        return (float(self.sigma), float(self.m), float(self.nu), float(self.log_norm))

    def check_theta(self, theta: float) -> None:
        if not self.K.contains(theta):
            raise DomainError(f"theta={theta} outside K=[{self.K.lo}, {self.K.hi}]")
        if self.family is Family.CAUCHY_SCALE and not theta > 0:
            raise DomainError(f"scale parameter must be > 0, got {theta}")

    def describe(self) -> dict:
        return {
            "family": self.family.value,
            "theta0": self.theta0,
            "K": [self.K.lo, self.K.hi],
            "sigma": self.sigma,
            "m": self.m,
            "nu": self.nu,
        }


def log_pdf(model: ModelSpec, theta: float, x):
    """log f(x | theta), normalizing constant included."""
    model.check_theta(theta)
    out = _k.log_pdf(model.code, model.params, theta, x)
    return out if np.ndim(out) else float(out)


def score(model: ModelSpec, theta: float, x) -> ScoreEval:
    """First and second theta-derivatives of log f(x | theta)."""
    model.check_theta(theta)
    s, ds = _k.score(model.code, model.params, theta, x)
    if np.ndim(s) == 0:
        return ScoreEval(float(s), float(ds))
    return ScoreEval(s, ds)


def _rng(stream):
    return stream.rng if hasattr(stream, "rng") else stream


def sample(model: ModelSpec, stream, count: int, theta: float | None = None) -> np.ndarray:
    """Draw ``count`` i.i.d. variates from f(. | theta0).

    ``stream`` is a :class:`mlelab.engine.SeededStream` or a numpy Generator.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = _rng(stream)
    theta = model.theta0 if theta is None else theta
    model.check_theta(theta)
    fam = model.family
    if fam is Family.GAUSSIAN:
        return theta + model.sigma * rng.standard_normal(count)
    if fam is Family.LOGISTIC:
        return rng.logistic(theta, 1.0, count)
    if fam is Family.CAUCHY_SCALE:
        return theta * np.tan(np.pi * (rng.random(count) - 0.5))
    return theta + model.sigma * _pearson_standard(model.m, model.nu, rng, count)


def _pearson_standard(m, nu, rng, count):
    """Pearson IV draws with theta=0, sigma=1."""
    if nu == 0.0 and m == 1.0:
        return np.tan(np.pi * (rng.random(count) - 0.5))
    df = 2.0 * m - 1.0
    if nu == 0.0:
        return rng.standard_t(df, count) / math.sqrt(df)
    # Rejection from the nu=0 member of the same m: the density ratio is
    # exp(nu * atan(y)), whose supremum over y is exp(|nu| pi / 2).
    out = np.empty(count)
    filled = 0
    log_env = abs(nu) * 0.5 * np.pi
    while filled < count:
        want = count - filled
        y = rng.standard_t(df, want + want // 2 + 16) / math.sqrt(df)
        u = rng.random(y.shape[0])
        acc = y[np.log(u) <= nu * np.arctan(y) - log_env]
        take = min(acc.shape[0], want)
        out[filled:filled + take] = acc[:take]
        filled += take
    return out


def _center_scale(model, theta):
    if model.family is Family.CAUCHY_SCALE:
        return 0.0, theta
    return theta, model.sigma


def expect(model: ModelSpec, theta: float, fn, epsabs: float = 1e-13,
           epsrel: float = 1e-12) -> float:
    """Quadrature of ``fn(x) f(x|theta)`` over the real line.

    Uses the substitution ``x = c + s tan(t)``, which maps algebraic tails
    onto bounded integrands.
    """
    model.check_theta(theta)
    c, s = _center_scale(model, theta)
    code, params = model.code, model.params

    def integrand(t):
        ct = math.cos(t)
        x = c + s * math.tan(t)
        dens = math.exp(float(_k.log_pdf(code, params, theta, x)))
        if dens == 0.0:
            return 0.0
        return float(fn(x)) * dens * s / (ct * ct)

    total = 0.0
    for a, b in ((-0.5 * np.pi, 0.0), (0.0, 0.5 * np.pi)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            res = integrate.quad(integrand, a, b, epsabs=epsabs, epsrel=epsrel,
                                 limit=500, full_output=1)
        val, err = res[0], res[1]
        if len(res) > 3 and err > max(1e3 * epsabs, 1e3 * epsrel * abs(val)):
            raise QuadratureError(f"{res[3]} (achieved abserr {err:.3g})")
        total += val
    return total


@functools.lru_cache(maxsize=256)
def fisher_information(model: ModelSpec, theta: float | None = None) -> float:
    """I(theta) = -E[s'_theta(X)] by adaptive quadrature."""
    theta = model.theta0 if theta is None else float(theta)
    code, params = model.code, model.params
    info = -expect(model, theta, lambda x: _k.score(code, params, theta, x)[1])
    if not info > 0:
        raise DomainError(f"Fisher information must be positive, got {info}")
    return info


def lipschitz_bound(model: ModelSpec) -> float:
    """Uniform bound on |s_theta(x)| over x and theta in K.

    Returns ``math.inf`` for the Gaussian control, whose score is unbounded.
    """
    fam = model.family
    if fam is Family.PEARSON4:
        return (model.m + abs(model.nu)) / model.sigma
    if fam is Family.LOGISTIC:
        return 1.0
    if fam is Family.CAUCHY_SCALE:
        return 1.0 / model.K.lo
    return math.inf


@functools.lru_cache(maxsize=16)
def _pearson_cdf_table(m, nu, sigma, nodes=4097):
    t = np.linspace(-0.5 * np.pi, 0.5 * np.pi, nodes)
    a = 2.0 * m - 2.0
    log_norm = pearson_log_normalizer(m, nu, sigma)

    def q(u):
        return math.exp(log_norm + a * math.log(math.cos(u)) + nu * u) * sigma

    cells = np.empty(nodes - 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for i in range(nodes - 1):
            cells[i] = integrate.quad(q, t[i], t[i + 1], epsabs=1e-15, limit=100)[0]
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    return t, cum / cum[-1]


def cdf(model: ModelSpec, x, theta: float | None = None):
    """Distribution function F(x | theta)."""
    theta = model.theta0 if theta is None else theta
    model.check_theta(theta)
    x = np.asarray(x, dtype=float)
    fam = model.family
    if fam is Family.GAUSSIAN:
        return special.ndtr((x - theta) / model.sigma)
    if fam is Family.LOGISTIC:
        return special.expit(x - theta)
    if fam is Family.CAUCHY_SCALE:
        return 0.5 + np.arctan(x / theta) / np.pi
    z = (x - theta) / model.sigma
    if model.nu == 0.0:
        df = 2.0 * model.m - 1.0
        return special.stdtr(df, z * math.sqrt(df))
    t, cum = _pearson_cdf_table(model.m, model.nu, model.sigma)
    return np.interp(np.arctan(z), t, cum)
