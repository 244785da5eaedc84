"""Monte Carlo laboratory for the normalized maximum-likelihood error.

Simulates ``Z_n = sqrt(I n)(theta_hat_n - theta0)`` for one-parameter
families on a compact parameter set and measures its distance to N(0, 1)
through moments, sub-Gaussian constants, KL divergence and Fisher
information.
"""
__version__ = "0.1.0"

from mlelab.models import Family, ModelSpec, ParamSet  # noqa: E402
from mlelab.solver import MleResult, SolverSettings, solve  # noqa: E402
from mlelab.engine import SeededStream, ZnMatrix, simulate_zn  # noqa: E402

__all__ = [
    "Family", "ModelSpec", "ParamSet",
    "MleResult", "SolverSettings", "solve",
    "SeededStream", "ZnMatrix", "simulate_zn",
    "__version__",
]
