import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from mlelab import models
from mlelab.engine import SeededStream
from mlelab.models import DomainError, Family, ModelSpec, ParamSet

from conftest import FAMILY_MODELS


def _quad_real(f, center=0.0, scale=1.0):
    """Plain scipy quad over the two half lines, independent of models.expect."""
    lo = integrate.quad(f, -np.inf, center, epsabs=1e-12, epsrel=1e-10, limit=400)[0]
    hi = integrate.quad(f, center, np.inf, epsabs=1e-12, epsrel=1e-10, limit=400)[0]
    return lo + hi


def _thetas(model, count=5):
    lo, hi = model.K.lo, model.K.hi
    return np.linspace(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), count)


# ---- construction ---------------------------------------------------------

def test_paramset_rejects_bad_intervals():
    with pytest.raises(ValueError):
        ParamSet(1.0, 1.0)
    with pytest.raises(ValueError):
        ParamSet(0.0, math.inf)


@pytest.mark.parametrize("kwargs", [
    dict(family="gaussian", theta0=10.0, K=ParamSet(-10, 10)),
    dict(family="pearson4", theta0=0.0, K=ParamSet(-1, 1), m=0.5),
    dict(family="gaussian", theta0=0.0, K=ParamSet(-1, 1), sigma=0.0),
    dict(family="cauchy_scale", theta0=1.0, K=ParamSet(0.0, 2.0)),
])
def test_model_invariants_rejected(kwargs):
    with pytest.raises(DomainError):
        ModelSpec(**kwargs)


def test_unknown_family():
    with pytest.raises(ValueError):
        ModelSpec("weibull", 0.0, ParamSet(-1, 1))


def test_theta_outside_k_is_domain_error():
    m = FAMILY_MODELS["logistic"]
    with pytest.raises(DomainError):
        models.log_pdf(m, 10.5, 0.0)
    # round-off slack is tolerated
    models.log_pdf(m, 10.0 + 1e-13, 0.0)


# ---- examples -------------------------------------------------------------

def test_log_pdf_examples():
    assert models.log_pdf(FAMILY_MODELS["gaussian"], 0.0, 0.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert models.log_pdf(FAMILY_MODELS["logistic"], 0.0, 0.0) == pytest.approx(math.log(0.25), abs=1e-12)
    assert models.log_pdf(FAMILY_MODELS["cauchy"], 0.0, 0.0) == pytest.approx(-math.log(math.pi), abs=1e-12)


def test_score_examples():
    ev = models.score(FAMILY_MODELS["cauchy"], 0.0, 0.0)
    assert ev.value == pytest.approx(0.0, abs=1e-15)
    assert ev.deriv == pytest.approx(-2.0, abs=1e-12)
    assert models.score(FAMILY_MODELS["logistic"], 5.0, 5.0).value == 0.0
    assert models.score(FAMILY_MODELS["cauchy_scale"], 1.0, 1.0).value == pytest.approx(0.0, abs=1e-15)


def test_fisher_information_examples():
    assert models.fisher_information(FAMILY_MODELS["gaussian"]) == pytest.approx(1.0, abs=1e-8)
    assert models.fisher_information(FAMILY_MODELS["logistic"]) == pytest.approx(1 / 3, abs=1e-8)
    assert models.fisher_information(FAMILY_MODELS["cauchy_scale"], 2.0) == pytest.approx(1 / 8, abs=1e-8)
    # Student-t with df nu: I = (nu+1)/((nu+3) s^2); Cauchy: 1/2
    assert models.fisher_information(FAMILY_MODELS["cauchy"]) == pytest.approx(0.5, abs=1e-8)


def test_lipschitz_examples():
    assert models.lipschitz_bound(FAMILY_MODELS["cauchy"]) == 1.0
    assert models.lipschitz_bound(FAMILY_MODELS["logistic"]) == 1.0
    assert models.lipschitz_bound(FAMILY_MODELS["cauchy_scale"]) == 2.0
    assert models.lipschitz_bound(FAMILY_MODELS["pearson4_skew"]) == pytest.approx((1.7 + 1.2) / 1.5)
    assert math.isinf(models.lipschitz_bound(FAMILY_MODELS["gaussian"]))


# ---- oracles --------------------------------------------------------------

@pytest.mark.parametrize("m,nu,sigma", [(1.0, 0.0, 1.0), (1.7, 1.2, 1.5), (0.75, -0.6, 0.8), (3.0, 4.0, 2.0)])
def test_pearson_normalizer_matches_complex_gamma(m, nu, sigma):
    # |Gamma(m + i nu/2) / Gamma(m)|^2 / (sigma B(m - 1/2, 1/2))
    lg = special.loggamma(complex(m, nu / 2)).real
    oracle = 2 * (lg - special.gammaln(m)) - math.log(sigma) - special.betaln(m - 0.5, 0.5)
    assert models.pearson_log_normalizer(m, nu, sigma) == pytest.approx(oracle, abs=1e-12)


def test_logistic_variance_oracle():
    m = FAMILY_MODELS["logistic"]
    var = _quad_real(lambda x: x * x * math.exp(models.log_pdf(m, 0.0, x)))
    assert var == pytest.approx(math.pi**2 / 3, abs=1e-8)


# ---- invariants -----------------------------------------------------------

def test_normalization(any_model):
    for t in _thetas(any_model):
        c, s = (0.0, t) if any_model.family is Family.CAUCHY_SCALE else (t, any_model.sigma)
        total = _quad_real(lambda x: math.exp(models.log_pdf(any_model, t, x)), c, s)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_score_finite_differences(any_model):
    lo, hi = any_model.K.lo, any_model.K.hi
    thetas = np.linspace(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), 10)
    xs = np.linspace(-8.0, 8.0, 10)
    for t in thetas:
        h = 1e-5 * max(1.0, abs(t))
        ev = models.score(any_model, t, xs)
        fd = (models.log_pdf(any_model, t + h, xs) - models.log_pdf(any_model, t - h, xs)) / (2 * h)
        np.testing.assert_array_less(np.abs(ev.value - fd), 1e-6 * (1 + np.abs(ev.value)))
        fd2 = (models.score(any_model, t + h, xs).value - models.score(any_model, t - h, xs).value) / (2 * h)
        np.testing.assert_array_less(np.abs(ev.deriv - fd2), 1e-6 * (1 + np.abs(ev.deriv)))


def test_zero_mean_score_and_information_identity(any_model):
    for t in _thetas(any_model, 3):
        mean = models.expect(any_model, t, lambda x: models.score(any_model, t, x).value)
        assert abs(mean) <= 1e-7
        var = models.expect(any_model, t, lambda x: models.score(any_model, t, x).value ** 2)
        info = models.fisher_information(any_model, t)
        assert abs(var - info) <= 1e-6
        assert info > 0


def test_scores_finite_everywhere(any_model):
    xs = np.array([-1e300, -1e8, -1.0, 0.0, 1.0, 1e8, 1e300])
    for t in _thetas(any_model, 3):
        ev = models.score(any_model, t, xs)
        if any_model.family is not Family.GAUSSIAN:
            assert np.all(np.isfinite(ev.value)) and np.all(np.isfinite(ev.deriv))


@pytest.mark.parametrize("name", ["logistic", "cauchy", "pearson4_skew", "pearson4_heavy", "cauchy_scale"])
def test_envelope_bound(name):
    m = FAMILY_MODELS[name]
    thetas = np.linspace(m.K.lo, m.K.hi, 200)
    xs = np.linspace(-50.0, 50.0, 200)
    sup = max(float(np.max(np.abs(models.score(m, t, xs).value))) for t in thetas)
    assert sup <= models.lipschitz_bound(m)


def test_sampler_fidelity(any_model):
    x = models.sample(any_model, SeededStream(99, 1), 100_000)
    ks = stats.kstest(x, lambda v: models.cdf(any_model, v)).statistic
    assert ks <= 1.95 / math.sqrt(1e5) * 1.5


def test_sampler_examples():
    g = models.sample(FAMILY_MODELS["gaussian"], SeededStream(1, 0), 1_000_000)
    assert abs(g.mean()) <= 4e-3
    lg = models.sample(FAMILY_MODELS["logistic"], SeededStream(1, 1), 1_000_000)
    assert lg.var() == pytest.approx(math.pi**2 / 3, abs=0.05)
    c = models.sample(FAMILY_MODELS["cauchy"], SeededStream(1, 2), 1_000_000)
    assert abs(np.median(c)) <= 0.01


def test_sampler_deterministic(any_model):
    a = models.sample(any_model, SeededStream(5, 3, 1), 1000)
    b = models.sample(any_model, SeededStream(5, 3, 1), 1000)
    np.testing.assert_array_equal(a, b)


def test_cdf_matches_quadrature():
    m = FAMILY_MODELS["pearson4_skew"]
    for x in (-3.0, 0.0, 0.7, 4.0):
        direct = integrate.quad(lambda u: math.exp(models.log_pdf(m, m.theta0, u)), -np.inf, x,
                                epsabs=1e-12, limit=400)[0]
        assert models.cdf(m, x) == pytest.approx(direct, abs=1e-7)
