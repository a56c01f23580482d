import numpy as np
import pytest

from cxplain.datasets import gen_single_informative
from cxplain.models import AnalyticModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def single_informative():
    return gen_single_informative(64, 4, seed=3)


@pytest.fixture
def threshold_model():
    """Near-perfect two-class model for gen_single_informative: sigmoid(40 (x_0 - 0.5))."""
    def make(p):
        w = np.zeros(p)
        w[0] = 40.0
        return AnalyticModel("sigmoid_linear", w=w, b=-20.0, two_class=True)
    return make


def random_simplex(rng, n, p):
    return rng.dirichlet(np.ones(p), size=n)


# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
