import math

import numpy as np
import pytest

from gvi.logreg_bench import BenchConfig, generate_dataset
from gvi.potential import make_gaussian_potential, make_logistic_posterior, make_polynomial_potential
from gvi.quadrature import GAUSS_HERMITE, build_rule


def gh(d, L):
    return build_rule(GAUSS_HERMITE, d, L)


def quartic(n=10.0):
    """v(x) = x^2/2 + x^4/4."""
    return make_polynomial_potential([[1.0]], None, [[[[6.0]]]], n=n, label="quartic")


def cubic(n=50.0, alpha=0.1):
    """v(x) = x^2/2 + alpha x^3, unbounded below; used only near its local minimum."""
    return make_polynomial_potential([[1.0]], [[[6.0 * alpha]]], None, n=n, allow_unbounded=True, label="cubic")


def logistic(n=200, seed=3, d=2, lam=math.sqrt(5.0)):
    cfg = BenchConfig(seed=seed, d=d, lam=lam)
    return make_logistic_posterior(generate_dataset(cfg, n, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def gaussian2d():
    mu = np.array([0.3, -1.0])
    C = np.array([[2.0, 0.4], [0.4, 0.5]])
    return mu, C, make_gaussian_potential(mu, C, n=7.0)


@pytest.fixture(scope="session")
def logistic2d():
    return logistic()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
