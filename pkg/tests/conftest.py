import numpy as np
import pytest

from polydich.admissibility import time_grid
from polydich.evolution import scenario
from polydich.norms import constant_norm


@pytest.fixture(scope="session")
def diag():
    return scenario("diag_dichotomy", lam=1.0)


@pytest.fixture(scope="session")
def contraction():
    return scenario("scalar_contraction", lam=1.0)


@pytest.fixture(scope="session")
def grid():
    return time_grid(1e3, 64)


@pytest.fixture(scope="session")
def small_grid():
    return time_grid(100.0, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def euclid2():
    return constant_norm(2)


@pytest.fixture(scope="session")
def euclid1():
    return constant_norm(1)
