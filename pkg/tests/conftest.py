import numpy as np
import pytest

from hrps.fixtures import load_fixture
from hrps.orbit import enumerate_ball


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def schottky2_L12():
    return enumerate_ball(load_fixture("schottky2"), 12)


@pytest.fixture(scope="session")
def tau3_L12():
    return enumerate_ball(load_fixture("schottky2-tau3"), 12)


@pytest.fixture(scope="session")
def tau3_L10(tau3_L12):
    return tau3_L12.restrict(10)


@pytest.fixture(scope="session")
def tau3_L7():
    return enumerate_ball(load_fixture("schottky2-tau3"), 7)


@pytest.fixture(scope="session")
def pingpong_L12():
    return enumerate_ball(load_fixture("pingpong-sl3"), 12)
