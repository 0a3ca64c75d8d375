import numpy as np
import pytest

from advestim.randkit import RngState


@pytest.fixture
def state():
    return RngState(seed=20260808)


@pytest.fixture
def gen(state):
    return state.generator()


def approx_sig(value, digits=3):
    """pytest.approx at a relative tolerance of `digits` significant digits."""
    return pytest.approx(value, rel=0.5 * 10.0 ** (1 - digits))


def pytest_addoption(parser):
    parser.addoption("--jobs", action="store", default=None,
                     help="worker count for Monte Carlo tests")


@pytest.fixture(scope="session")
def jobs(request):
    import os
    opt = request.config.getoption("--jobs")
    if opt:
        return int(opt)
    return max(1, min(8, os.cpu_count() or 1))
