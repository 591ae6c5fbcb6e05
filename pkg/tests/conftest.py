import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from botdasvr import baselines, spectra, svr

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def training_set():
    return spectra.generate_training_set()


@pytest.fixture(scope="session")
def trained(training_set):
    """Default-hyperparameter model on the full training grid."""
    return svr.train(training_set)


@pytest.fixture(scope="session")
def svr_model(trained):
    return trained[0]


@pytest.fixture(scope="session")
def svc_desk(training_set):
    return baselines.svc_train(training_set)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_model(rng, n_sv, n_feat, scale=1.0):
    sv = rng.uniform(-1.0, 1.0, (n_sv, n_feat))
    beta = rng.normal(0.0, scale, n_sv)
    beta[beta == 0] = 1e-3
    return svr.SvrModel(sv, beta, float(rng.normal(25.0, 10.0)), None, svr.SvrHyperparams())


@pytest.fixture(scope="session")
def svc_full(training_set):
    """One label per 0.5 degC, 141 classes."""
    return baselines.svc_train(training_set, label_step=None)


ACCEPTANCE = []


@pytest.fixture
def verdict():
    """``verdict(label, ok, detail)`` logs one PASS/FAIL line and returns ``ok``."""

    def record(label, ok, detail=""):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
