import numpy as np
import pytest

from mlelab.models import ModelSpec, ParamSet

FAMILY_MODELS = {
    "gaussian": ModelSpec("gaussian", 0.0, ParamSet(-10.0, 10.0)),
    "gaussian_s2": ModelSpec("gaussian", 0.5, ParamSet(-10.0, 10.0), sigma=2.0),
    "logistic": ModelSpec("logistic", 0.0, ParamSet(-10.0, 10.0)),
    "cauchy": ModelSpec("pearson4", 0.0, ParamSet(-10.0, 10.0)),
    "pearson4_skew": ModelSpec("pearson4", 0.3, ParamSet(-5.0, 5.0), sigma=1.5, m=1.7, nu=1.2),
    "pearson4_heavy": ModelSpec("pearson4", 0.0, ParamSet(-5.0, 5.0), sigma=0.8, m=0.75, nu=-0.6),
    "student3": ModelSpec("pearson4", 0.0, ParamSet(-5.0, 5.0), m=2.0),
    "cauchy_scale": ModelSpec("cauchy_scale", 1.0, ParamSet(0.5, 4.0)),
}


@pytest.fixture(params=sorted(FAMILY_MODELS))
def any_model(request):
    return FAMILY_MODELS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


#: (criterion number, title, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num}. {title}: {detail}")
