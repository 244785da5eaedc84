import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mlelab import info, kernels
from mlelab.engine import simulate_zn
from mlelab.info import (DivergenceEstimate, KdeDensity, Method, bobkov_bound,
                         density_fisher_information, empirical_cf, entropy_knn,
                         gaussian_kl, kde, kl_to_std_normal)

from conftest import FAMILY_MODELS

N = 100_000


def _normal(seed, n=N, mu=0.0, sd=1.0):
    return mu + sd * np.random.default_rng(seed).standard_normal(n)


def _phi(z, s2=1.0):
    return np.exp(-0.5 * z * z / s2) / math.sqrt(2 * math.pi * s2)


def _dphi(z, s2=1.0):
    return -z / s2 * _phi(z, s2)


def test_divergence_estimate_invariants():
    with pytest.raises(ValueError):
        DivergenceEstimate(0.0, Method.KNN_ENTROPY, 0.1, 99)
    with pytest.raises(ValueError):
        DivergenceEstimate(0.0, Method.KNN_ENTROPY, -0.1, 100)


# ---- kNN entropy ------------------------------------------------------------

def test_entropy_examples():
    rng = np.random.default_rng(1)
    assert entropy_knn(rng.standard_normal(N)).value == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=0.02)
    assert entropy_knn(rng.random(N)).value == pytest.approx(0.0, abs=0.02)
    assert entropy_knn(2 * rng.random(N)).value == pytest.approx(math.log(2), abs=0.02)


def test_entropy_preconditions():
    with pytest.raises(ValueError):
        entropy_knn(np.arange(200.0), k=0)
    with pytest.raises(ValueError):
        entropy_knn(np.arange(50.0))


def test_ties_are_jittered():
    x = np.repeat(np.arange(100.0), 3)
    est = entropy_knn(x)
    assert math.isfinite(est.value)
    assert est.notes


def test_jackknife_stderr_is_sane():
    est = entropy_knn(_normal(2))
    # the KL entropy estimator's sd is close to sd(log p(X)) / sqrt(N) = sqrt(1/2) / sqrt(N)
    assert 0.5 * math.sqrt(0.5 / N) < est.stderr < 3 * math.sqrt(0.5 / N)
    assert len(est.replicates) == info.JACKKNIFE_GROUPS


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.05, 20.0), sign=st.sampled_from([-1.0, 1.0]), b=st.floats(-50.0, 50.0),
       seed=st.integers(0, 2**32 - 1))
def test_affine_entropy_law(a, sign, b, seed):
    x = np.random.default_rng(seed).standard_t(5, 5000)
    h0, h1 = entropy_knn(x), entropy_knn(sign * a * x + b)
    assert abs(h1.value - h0.value - math.log(a)) <= 3 * max(h0.stderr, h1.stderr)


@pytest.mark.skipif("compiled" not in kernels.available(), reason="extension not built")
def test_knn_backends_agree():
    x = np.sort(_normal(3, 20_000))
    np.testing.assert_allclose(kernels.get("compiled").knn_distances(x, 5),
                               kernels.get("python").knn_distances(x, 5), rtol=1e-14)


# ---- KL to N(0,1) -----------------------------------------------------------

@pytest.mark.parametrize("method", ["knn", "kde"])
def test_kl_examples(method):
    assert kl_to_std_normal(_normal(4), method).value == pytest.approx(0.0, abs=0.02)
    assert kl_to_std_normal(_normal(5, mu=1.0), method).value == pytest.approx(0.5, abs=0.03)
    assert kl_to_std_normal(_normal(6, sd=2.0), method).value == pytest.approx(0.5 * (3 - math.log(4)), abs=0.03)


@pytest.mark.parametrize("method", ["knn", "kde"])
@pytest.mark.parametrize("mu", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("sd", [0.8, 1.0, 1.25])
def test_kl_gaussian_oracle_grid(method, mu, sd):
    est = kl_to_std_normal(_normal(int(100 * mu + 10 * sd), mu=mu, sd=sd), method)
    assert abs(est.value - gaussian_kl(mu, sd * sd)) <= max(0.03, 3 * est.stderr)


def test_kl_rejects_bad_input():
    with pytest.raises(ValueError):
        kl_to_std_normal(np.zeros(50))
    with pytest.raises(ValueError):
        kl_to_std_normal(np.r_[np.zeros(200), np.nan])
    with pytest.raises(ValueError):
        kl_to_std_normal(_normal(1, 200), "ClosedForm")


def test_estimators_agree_on_zn_columns():
    mat = simulate_zn(FAMILY_MODELS["logistic"], [10, 100], 4000, 0.1, 17)
    for j in range(2):
        for col in (mat.column(j), mat.smoothed_column(j)):
            a, b = kl_to_std_normal(col, "knn"), kl_to_std_normal(col, "kde")
            assert abs(a.value - b.value) <= max(0.05, 3 * math.hypot(a.stderr, b.stderr))


# ---- KDE ---------------------------------------------------------------------

def test_kde_examples():
    x = _normal(7)
    d = kde(x)
    assert d.mass() == pytest.approx(1.0, abs=0.005)
    assert d.pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=0.01)
    assert d.step <= d.bandwidth / 4 + 1e-15
    assert d.start <= x.min() - 4 * d.bandwidth + 1e-12
    assert d.stop >= x.max() + 4 * d.bandwidth - 1e-9
    assert np.all(d.values >= 0)


def test_kde_derivative_at_zero_symmetric_sample():
    half = np.abs(_normal(8, N // 2))
    d = kde(np.r_[half, -half])
    assert abs(d.dpdf(0.0)) <= 1e-12


def test_kde_derivative_at_zero_within_noise():
    # p'_h(0) is a mean of (X / h^3) phi(X / h); its sd is sqrt(E[term^2] / N)
    x = _normal(9)
    d = kde(x)
    h = d.bandwidth
    z = np.random.default_rng(0).standard_normal(2_000_000)
    term = z / h**3 * np.exp(-0.5 * (z / h) ** 2) / math.sqrt(2 * math.pi)
    sd = math.sqrt(np.mean(term**2) / N)
    assert 0.02 < sd < 0.04
    assert abs(d.dpdf(0.0)) <= 4 * sd


def test_kde_grid_matches_exact_kernel_sums():
    x = _normal(10, 2000)
    d = kde(x)
    z = d.grid[::97]
    np.testing.assert_allclose(d.values[::97], d.pdf(z), atol=1e-12)
    np.testing.assert_allclose(d.derivs[::97], d.dpdf(z), atol=1e-12)


def test_kde_rejects_degenerate():
    with pytest.raises(ValueError):
        kde(np.ones(500))


# ---- Fisher information --------------------------------------------------------

def test_fisher_examples():
    exact = KdeDensity.analytic(_phi, _dphi, -12, 12, 0.01)
    f = density_fisher_information(exact)
    assert f.information == pytest.approx(1.0, abs=1e-8)
    assert f.standardized == pytest.approx(0.0, abs=1e-8)
    wide = KdeDensity.analytic(lambda z: _phi(z, 4), lambda z: _dphi(z, 4), -25, 25, 0.01)
    assert density_fisher_information(wide).information == pytest.approx(0.25, abs=1e-8)
    est = density_fisher_information(kde(_normal(11)))
    assert est.information == pytest.approx(1.0, abs=0.1)
    assert est.information_stderr > 0


def test_fisher_clip_validation():
    with pytest.raises(ValueError):
        density_fisher_information(kde(_normal(1, 500)), clip=0.0)


def test_debruijn_closed_form_oracle():
    # Z_n ~ N(0, s2): J = s2 * (1/s2) - 1 = 0; smoothed variance (1-eps) s2 + eps
    eps, s2 = 0.1, 1.21
    exact = KdeDensity.analytic(lambda z: _phi(z, s2), lambda z: _dphi(z, s2), -20, 20, 0.005)
    J = density_fisher_information(exact).standardized
    assert J == pytest.approx(0.0, abs=1e-8)
    slack = eps * J / 2 - (gaussian_kl(0, s2) - gaussian_kl(0, (1 - eps) * s2 + eps))
    assert slack == pytest.approx(-0.0017465, abs=1e-6)


# ---- characteristic function ----------------------------------------------------

def test_cf_examples():
    x = _normal(12)
    w = np.array([0.0, 1 / (2 * math.pi)])
    cf = empirical_cf(x, w)
    assert cf[0] == 1.0
    assert cf[1].real == pytest.approx(math.exp(-0.5), abs=0.01)
    assert cf[1].imag == pytest.approx(0.0, abs=0.01)


def test_cf_shift_rule():
    x = _normal(13, 5000)
    w = np.linspace(-2, 2, 41)
    c = 0.7
    np.testing.assert_allclose(empirical_cf(x + c, w), empirical_cf(x, w) * np.exp(-2j * np.pi * w * c), atol=1e-12)


def test_cf_bounded():
    x = np.full(1000, 0.123456789)
    cf = empirical_cf(x, np.linspace(-50, 50, 2001))
    assert np.all(np.abs(cf) <= 1.0)
    with pytest.raises(ValueError):
        empirical_cf(x, [np.inf])


def test_smoothed_cf_domination():
    eps = 0.1
    mat = simulate_zn(FAMILY_MODELS["cauchy"], [10, 100], 5000, eps, 23)
    w = np.linspace(-1.5, 1.5, 61)
    bound = np.exp(-0.5 * (2 * math.pi * math.sqrt(eps) * w) ** 2)
    for j in range(2):
        col = mat.smoothed_column(j)
        assert np.all(np.abs(empirical_cf(col, w)) <= bound + 5 / math.sqrt(col.size))


# ---- truncation bound -------------------------------------------------------------

def test_bobkov_on_exact_gaussian():
    exact = KdeDensity.analytic(_phi, _dphi, -10, 10, 0.001)
    for T in (1.0, 2.5, 4.0):
        r = bobkov_bound(exact, T)
        assert r.term_central == pytest.approx(0.0, abs=1e-15)
        tail2 = 0.5 * 2 * (T * _phi(T) + stats.norm.sf(T))
        tail_ent = -2 * (0.5 * math.log(2 * math.pi) * stats.norm.sf(T) + 0.5 * (T * _phi(T) + stats.norm.sf(T)))
        assert r.term_tail_second_moment == pytest.approx(tail2, abs=1e-5)
        assert r.term_tail_entropy == pytest.approx(tail_ent, abs=1e-5)
        assert r.total == pytest.approx(r.term_exp + r.term_central + r.term_tail_second_moment + r.term_tail_entropy, abs=1e-15)
    wide = KdeDensity.analytic(_phi, _dphi, -14, 14, 0.001)
    assert abs(bobkov_bound(wide, 8.0).total) <= 1e-10


def test_bobkov_extends_short_grids():
    short = KdeDensity.analytic(_phi, _dphi, -3, 3, 0.01)
    r = bobkov_bound(short, 5.0)
    assert r.term_tail_entropy == 0.0 and r.term_tail_second_moment == 0.0
    assert math.isfinite(r.total)
    with pytest.raises(ValueError):
        bobkov_bound(short, 0.0)


def test_bobkov_upper_bounds_kl():
    x = _normal(14, mu=0.2)
    d = kde(x)
    r = bobkov_bound(d, 4.0, x)
    est = kl_to_std_normal(x, "kde")
    assert r.total >= est.value - 3 * est.stderr
    assert r.total >= gaussian_kl(0.2, 1.0) - 3 * est.stderr
    assert r.term_exp >= 0 and r.term_central >= 0 and r.term_tail_second_moment >= 0
