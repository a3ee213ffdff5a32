import sys
import numpy as np
import pytest

from msgd.loss import LossModel
from msgd.types import Population


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def uniform_grid():
    # midpoints of 2001 equal cells: a quadrature of U(0, 1)
    n = 2001
    return Population((np.arange(n) + 0.5) / n, "scalar-1d")


@pytest.fixture
def scalar_loss():
    return LossModel("squared-scalar")


def make_classification(n=400, d=3, seed=0):
    r = np.random.default_rng(seed)
    Z = r.standard_normal((n, d))
    y = (Z @ r.standard_normal(d) + 0.3 * r.standard_normal(n) > 0).astype(float)
    return Population(Z, "binary-classification", labels=y)


def make_masked(n=200, d=3, d_r=4, seed=0):
    r = np.random.default_rng(seed)
    Z = r.standard_normal((n, d))
    R = Z @ r.standard_normal((d, d_r)) + 0.1 * r.standard_normal((n, d_r))
    mask = r.random((n, d_r)) < 0.6
    mask[np.arange(n), r.integers(d_r, size=n)] = True
    return Population(Z, "regression-masked", ratings=R, mask=mask)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS):
        terminalreporter.write_line(line)
