"""Experiment configuration: TOML file, validation, presets and content digest.

A config has five tables::

    [model]       family, theta0, K = [lo, hi], sigma, m, nu
    [simulation]  n_grid, replicates, epsilon, epsilon_sweep, master_seed
    [solver]      grid_points, newton_tol, max_newton_iters
    [estimator]   k, clip, bandwidth (omit for Silverman), bobkov_T
    [output]      dir

The digest hashes every table except ``[output]``, so moving a run does not
change its identity. ``MLELAB_OUT`` overrides the output directory.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from mlelab.diagnostics import EstimatorSettings
from mlelab.models import DomainError, Family, ModelSpec, ParamSet
from mlelab.solver import SolverSettings

OUT_ENV = "MLELAB_OUT"
DEFAULT_SWEEP = [0.02, 0.05, 0.1, 0.2]

DEFAULTS = {
    "model": {"family": "gaussian", "theta0": 0.0, "K": [-10.0, 10.0],
              "sigma": 1.0, "m": 1.0, "nu": 0.0},
    "simulation": {"n_grid": [10, 50, 200, 1000], "replicates": 10_000, "epsilon": 0.1,
                   "epsilon_sweep": DEFAULT_SWEEP, "master_seed": 20240607},
    "solver": {"grid_points": 256, "newton_tol": 1e-10, "max_newton_iters": 100},
    "estimator": {"k": 5, "clip": 1e-12, "bobkov_T": 4.0},
    "output": {"dir": "runs/default"},
}

PRESETS = {
    "gaussian": {
        "model": {"family": "gaussian", "theta0": 0.0, "K": [-10.0, 10.0]},
        "simulation": {"n_grid": [5, 50, 500], "replicates": 100_000},
        "output": {"dir": "runs/gaussian"},
    },
    "logistic": {
        "model": {"family": "logistic", "theta0": 0.0, "K": [-10.0, 10.0]},
        "output": {"dir": "runs/logistic"},
    },
    "pearson4": {
        "model": {"family": "pearson4", "theta0": 0.0, "K": [-5.0, 5.0],
                  "sigma": 1.0, "m": 1.0, "nu": 0.0},
        "output": {"dir": "runs/pearson4"},
    },
    "cauchy_scale": {
        "model": {"family": "cauchy_scale", "theta0": 1.0, "K": [0.5, 4.0]},
        "output": {"dir": "runs/cauchy_scale"},
    },
}

_KNOWN = {
    "model": {"family", "theta0", "K", "sigma", "m", "nu"},
    "simulation": {"n_grid", "replicates", "epsilon", "epsilon_sweep", "master_seed"},
    "solver": {"grid_points", "newton_tol", "max_newton_iters"},
    "estimator": {"k", "clip", "bandwidth", "bobkov_T"},
    "output": {"dir"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _merge(base, over):
    out = copy.deepcopy(base)
    for sec, vals in over.items():
        if isinstance(vals, dict) and isinstance(out.get(sec), dict):
            out[sec].update(copy.deepcopy(vals))
        else:
            out[sec] = copy.deepcopy(vals)
    return out


def _num(data, sec, key, kind=float, positive=False, nonneg=False):
    field = f"{sec}.{key}"
    v = data[sec][key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(field, f"expected a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(field, f"expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(field, f"must be finite, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(field, f"must be > 0, got {v!r}")
    if nonneg and v < 0:
        raise ConfigError(field, f"must be >= 0, got {v!r}")
    return v


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    n_grid: tuple
    replicates: int
    epsilon: float
    epsilon_sweep: tuple
    master_seed: int
    solver: SolverSettings
    estimator: EstimatorSettings
    output_dir: Path

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config", "expected a table")
        for sec, vals in raw.items():
            if sec not in _KNOWN:
                raise ConfigError(sec, "unknown section")
            if not isinstance(vals, dict):
                raise ConfigError(sec, "expected a table")
            for key in vals:
                if key not in _KNOWN[sec]:
                    raise ConfigError(f"{sec}.{key}", "unknown key")
        data = _merge(DEFAULTS, raw)

        fam = data["model"]["family"]
        try:
            family = Family(fam)
        except ValueError:
            choices = ", ".join(f.value for f in Family)
            raise ConfigError("model.family", f"unknown family {fam!r} (choose from {choices})") from None
        theta0 = _num(data, "model", "theta0")
        K = data["model"]["K"]
        if not (isinstance(K, list) and len(K) == 2):
            raise ConfigError("model.K", f"expected [lo, hi], got {K!r}")
        try:
            lo, hi = (float(v) for v in K)
            pset = ParamSet(lo, hi)
        except (TypeError, ValueError) as exc:
            raise ConfigError("model.K", str(exc)) from None
        if not pset.lo < theta0 < pset.hi:
            raise ConfigError("model.theta0", f"must lie strictly inside K = [{lo}, {hi}], got {theta0}")
        sigma = _num(data, "model", "sigma", positive=True)
        m = _num(data, "model", "m")
        nu = _num(data, "model", "nu")
        if family is Family.PEARSON4 and not m > 0.5:
            raise ConfigError("model.m", f"Pearson IV requires m > 1/2, got {m}")
        if family is Family.CAUCHY_SCALE and not lo > 0:
            raise ConfigError("model.K", f"scale parameter set must be positive, got lo = {lo}")
        try:
            model = ModelSpec(family, theta0, pset, sigma=sigma, m=m, nu=nu)
        except DomainError as exc:
            raise ConfigError("model", str(exc)) from None

        grid = data["simulation"]["n_grid"]
        if not (isinstance(grid, list) and grid):
            raise ConfigError("simulation.n_grid", "expected a nonempty list of integers")
        if any(isinstance(n, bool) or not isinstance(n, int) or n < 2 for n in grid):
            raise ConfigError("simulation.n_grid", f"entries must be integers >= 2, got {grid}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("simulation.n_grid", f"must be strictly increasing, got {grid}")
        reps = _num(data, "simulation", "replicates", int)
        if reps < 100:
            raise ConfigError("simulation.replicates", f"must be >= 100, got {reps}")
        eps = _num(data, "simulation", "epsilon")
        if not 0 < eps < 1:
            raise ConfigError("simulation.epsilon", f"must lie in (0, 1), got {eps}")
        sweep = data["simulation"]["epsilon_sweep"]
        if not isinstance(sweep, list) or any(
                isinstance(e, bool) or not isinstance(e, (int, float)) or not 0 < e < 1 for e in sweep):
            raise ConfigError("simulation.epsilon_sweep", f"entries must lie in (0, 1), got {sweep!r}")
        seed = _num(data, "simulation", "master_seed", int, nonneg=True)

        try:
            solver = SolverSettings(
                _num(data, "solver", "grid_points", int),
                _num(data, "solver", "newton_tol", positive=True),
                _num(data, "solver", "max_newton_iters", int),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("solver", str(exc)) from None

        est = data["estimator"]
        bw = est.get("bandwidth")
        if bw is not None:
            bw = _num(data, "estimator", "bandwidth", positive=True)
        try:
            estimator = EstimatorSettings(
                _num(data, "estimator", "k", int, positive=True),
                _num(data, "estimator", "clip", positive=True),
                bw,
                _num(data, "estimator", "bobkov_T", positive=True),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("estimator", str(exc)) from None

        out = data["output"]["dir"]
        if not isinstance(out, str) or not out:
            raise ConfigError("output.dir", f"expected a path, got {out!r}")
        out = os.environ.get(OUT_ENV) or out
        return cls(model, tuple(grid), reps, eps, tuple(float(e) for e in sweep), seed,
                   solver, estimator, Path(out))

    def to_dict(self) -> dict:
        m = self.model
        est = {"k": self.estimator.k, "clip": self.estimator.clip,
               "bobkov_T": self.estimator.bobkov_T}
        if self.estimator.bandwidth is not None:
            est["bandwidth"] = self.estimator.bandwidth
        return {
            "model": {"family": m.family.value, "theta0": m.theta0, "K": [m.K.lo, m.K.hi],
                      "sigma": m.sigma, "m": m.m, "nu": m.nu},
            "simulation": {"n_grid": list(self.n_grid), "replicates": self.replicates,
                           "epsilon": self.epsilon, "epsilon_sweep": list(self.epsilon_sweep),
                           "master_seed": self.master_seed},
            "solver": {"grid_points": self.solver.grid_points,
                       "newton_tol": self.solver.newton_tol,
                       "max_newton_iters": self.solver.max_newton_iters},
            "estimator": est,
            "output": {"dir": str(self.output_dir)},
        }

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def with_output(self, path) -> "ExperimentConfig":
        return replace(self, output_dir=Path(path))

    @property
    def digest(self) -> str:
        """sha256 of the canonical JSON form, output directory excluded."""
        body = {k: v for k, v in self.to_dict().items() if k != "output"}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def loads(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"not valid TOML: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return loads(text)


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r} (choose from {', '.join(PRESETS)})")
    return ExperimentConfig.from_dict(copy.deepcopy(PRESETS[name]))
