import numpy as np
import pytest

from lowrank.init import InitConfig, initialize, make_mf_problem
from lowrank.lnn import make_lnn_problem


@pytest.fixture(scope="session")
def mf_problem():
    """The 100 x 80, rank-5, kappa = 5 instance."""
    return make_mf_problem(100, 80, 5, 1.0, 0.2, seed=0)


@pytest.fixture(scope="session")
def lnn_problem():
    return make_lnn_problem(100, 80, 120, rank_D=5, sigma1_D=1.0, sigmar_D=0.5, seed=0)


@pytest.fixture(scope="session")
def small_mf():
    return make_mf_problem(12, 9, 3, 1.0, 0.3, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sketch(problem, d, seed=0, **kw):
    return initialize(problem, InitConfig("mf-sketch", d=d, seed=seed, **kw))


ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Keep one pass/fail line per acceptance criterion for the terminal summary."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
