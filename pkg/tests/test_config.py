import pytest
from hypothesis import given, settings, strategies as st

from mlelab import config
from mlelab.config import ConfigError, ExperimentConfig, loads


def _err(text):
    with pytest.raises(ConfigError) as info:
        loads(text)
    return info.value


@pytest.mark.parametrize("name", sorted(config.PRESETS))
def test_presets_valid_and_round_trip(name):
    cfg = config.preset(name)
    assert loads(cfg.to_toml()) == cfg
    assert loads(cfg.to_toml()).digest == cfg.digest


def test_preset_contents():
    g = config.preset("gaussian")
    assert g.n_grid == (5, 50, 500) and g.replicates == 100_000
    lg = config.preset("logistic")
    assert lg.model.K.lo == -10 and lg.n_grid == (10, 50, 200, 1000) and lg.epsilon == 0.1
    p = config.preset("pearson4")
    assert (p.model.m, p.model.nu, p.model.sigma) == (1.0, 0.0, 1.0)
    c = config.preset("cauchy_scale")
    assert c.model.theta0 == 1.0 and (c.model.K.lo, c.model.K.hi) == (0.5, 4.0)
    with pytest.raises(ConfigError):
        config.preset("nope")


def test_digest_ignores_output_dir():
    a = config.preset("logistic")
    assert a.with_output("/elsewhere").digest == a.digest
    b = loads(a.to_toml().replace("master_seed = 20240607", "master_seed = 1"))
    assert b.digest != a.digest


def test_out_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv(config.OUT_ENV, str(tmp_path))
    assert config.preset("logistic").output_dir == tmp_path


@pytest.mark.parametrize("text,field", [
    ('[model]\nfamily = "weibull"\n', "model.family"),
    ('[model]\ntheta0 = 10.0\n', "model.theta0"),
    ('[model]\nK = [1.0, -1.0]\n', "model.K"),
    ('[model]\nfamily = "pearson4"\nm = 0.5\n', "model.m"),
    ('[model]\nfamily = "cauchy_scale"\ntheta0 = 1.0\nK = [0.0, 2.0]\n', "model.K"),
    ('[model]\nsigma = -1.0\n', "model.sigma"),
    ('[simulation]\nn_grid = [10, 5]\n', "simulation.n_grid"),
    ('[simulation]\nn_grid = [1, 5]\n', "simulation.n_grid"),
    ('[simulation]\nreplicates = 50\n', "simulation.replicates"),
    ('[simulation]\nepsilon = 1.0\n', "simulation.epsilon"),
    ('[simulation]\nepsilon_sweep = [0.0]\n', "simulation.epsilon_sweep"),
    ('[simulation]\nmaster_seed = -1\n', "simulation.master_seed"),
    ('[solver]\ngrid_points = 4\n', "solver"),
    ('[estimator]\nk = 0\n', "estimator.k"),
    ('[estimator]\nclip = 0.0\n', "estimator.clip"),
    ('[estimator]\nbandwidth = 0.0\n', "estimator.bandwidth"),
    ('[output]\ndir = 3\n', "output.dir"),
    ('[extra]\na = 1\n', "extra"),
    ('[model]\ncolour = 1\n', "model.colour"),
    ('not toml [', "config"),
])
def test_validation_names_field(text, field):
    e = _err(text)
    assert e.field == field
    assert field in str(e)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "absent.toml")


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(family=st.sampled_from(["gaussian", "logistic", "pearson4", "cauchy_scale"]),
       theta=st.floats(0.6, 3.9), grid=st.lists(st.integers(2, 5000), min_size=1, max_size=6, unique=True),
       reps=st.integers(100, 10**6), eps=st.floats(0.001, 0.999), seed=st.integers(0, 2**63 - 1),
       m=st.floats(0.51, 10), nu=finite, k=st.integers(1, 20),
       bw=st.one_of(st.none(), st.floats(0.01, 3)))
def test_round_trip_property(family, theta, grid, reps, eps, seed, m, nu, k, bw):
    est = {"k": k}
    if bw is not None:
        est["bandwidth"] = bw
    raw = {"model": {"family": family, "theta0": theta, "K": [0.5, 4.0], "m": m, "nu": nu},
           "simulation": {"n_grid": sorted(grid), "replicates": reps, "epsilon": eps, "master_seed": seed},
           "estimator": est}
    cfg = ExperimentConfig.from_dict(raw)
    again = loads(cfg.to_toml())
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()
    assert again.digest == cfg.digest
