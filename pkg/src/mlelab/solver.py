"""Maximum-likelihood estimation over a compact interval.

The likelihood of heavy-tailed location models is multimodal, so a local
root of the score is not enough: :func:`solve` scans a uniform grid on K,
then refines the best cell with Newton's method on ``L_n'`` safeguarded by
bisection and clamped to the cell. Maxima on the edge of K are kept and
flagged.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from mlelab import kernels
from mlelab.models import DomainError, ModelSpec


class NonFiniteLikelihood(ValueError):
    """The log-likelihood is not finite on the scan grid (corrupted data)."""


class SolverWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SolverSettings:
    grid_points: int = 256
    newton_tol: float = 1e-10
    max_newton_iters: int = 100

    def __post_init__(self):
        if self.grid_points < 8:
            raise ValueError(f"grid_points must be >= 8, got {self.grid_points}")
        if not self.newton_tol > 0:
            raise ValueError(f"newton_tol must be > 0, got {self.newton_tol}")
        if self.max_newton_iters < 1:
            raise ValueError(f"max_newton_iters must be >= 1, got {self.max_newton_iters}")


@dataclass(frozen=True)
class MleResult:
    theta_hat: float
    loglik: float
    score_at_hat: float
    at_boundary: bool
    iterations: int
    converged: bool = True


def log_likelihood(model: ModelSpec, data, theta: float) -> float:
    """Normalized log-likelihood ``(1/n) sum log f(x_i | theta)``."""
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        raise ValueError("data must be nonempty")
    model.check_theta(theta)
    return float(kernels.active.mean_loglik(model.code, model.params, data, theta))


def score_mean(model: ModelSpec, data, theta: float) -> float:
    """``L_n'(theta)``, the mean of the per-point scores."""
    model.check_theta(theta)
    data = np.asarray(data, dtype=float)
    return float(kernels.active.mean_score(model.code, model.params, data, theta)[0])


def solve(model: ModelSpec, data, settings: SolverSettings | None = None,
          backend=None) -> MleResult:
    """Global maximizer of ``L_n`` over ``model.K``."""
    settings = settings or SolverSettings()
    data = np.asarray(data, dtype=float).ravel()
    if data.size == 0:
        raise ValueError("data must be nonempty")
    impl = kernels.get(backend)
    t, ll, s, bd, it, st = impl.solve_one(
        model.code, model.params, data, model.K.lo, model.K.hi,
        settings.grid_points, settings.newton_tol, settings.max_newton_iters,
    )
    if st == kernels.python.NONFINITE:
        raise NonFiniteLikelihood("log-likelihood is not finite on the scan grid")
    converged = st == kernels.python.OK
    if not converged:
        warnings.warn("iteration cap reached; returning best iterate", SolverWarning)
    if not model.K.contains(t):
        raise DomainError(f"solver left K: {t}")
    return MleResult(float(t), float(ll), float(s), bool(bd), int(it), converged)


def solve_batch(model: ModelSpec, data, settings: SolverSettings | None = None,
                backend=None):
    """Row-wise :func:`solve` on a 2-d array, returning parallel arrays.

    Returns ``(theta_hat, loglik, score, at_boundary, iterations, status)``;
    status is 0 (ok), 1 (iteration cap) or 2 (non-finite likelihood).
    """
    settings = settings or SolverSettings()
    impl = kernels.get(backend)
    return impl.solve_batch(
        model.code, model.params, np.ascontiguousarray(data, dtype=float),
        model.K.lo, model.K.hi, settings.grid_points, settings.newton_tol,
        settings.max_newton_iters,
    )
