import numpy as np
import pytest

from mrct_rmst.data import RegionPanel


def make_panel(time, event, treatment, X=None, region_id=1, propensity=None):
    time = np.asarray(time, dtype=float)
    if X is None:
        X = np.zeros((time.size, 1))
    return RegionPanel(region_id, time, event, treatment, X, propensity)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_panel(rng, n=200, p=2, censor_rate=0.3, region_id=1):
    X = rng.normal(size=(n, p))
    z = rng.integers(0, 2, n)
    z[:2] = [0, 1]
    T = rng.exponential(1.0 / np.exp(0.3 * X[:, 0] - 0.4 * z))
    C = rng.exponential(1.0 / censor_rate, n) if censor_rate > 0 else np.full(n, np.inf)
    U = np.minimum(T, C)
    d = (T <= C).astype(int)
    return RegionPanel(region_id, U, d, z, X)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
