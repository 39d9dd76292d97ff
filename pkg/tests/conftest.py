import numpy as np
import pytest

from oscillode.datagen import SamplingDomains, build_dataset
from oscillode.integrators import ReferenceSolverConfig
from oscillode.problems import INVERTED_PENDULUM, VAN_DER_POL

# acceptance results, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pendulum():
    return INVERTED_PENDULUM


@pytest.fixture(scope="session")
def vdp():
    return VAN_DER_POL


@pytest.fixture(scope="session")
def small_dataset():
    return build_dataset(INVERTED_PENDULUM, SamplingDomains(seed=3), 400, ReferenceSolverConfig())


def pendulum_phi1(tau, y, eps):
    """Closed form of y + eps * int_0^tau (f - <f>) for the pendulum."""
    y1, y2 = y[..., 0], y[..., 1]
    c = 1.0 - np.cos(tau)
    return np.stack([y1 + eps * c * np.sin(y1),
                     y2 + eps * (np.sin(2 * y1) * np.sin(2 * tau) / 8.0 - c * y2 * np.cos(y1))], axis=-1)
