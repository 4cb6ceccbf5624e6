import numpy as np
import pytest

from comem.graph import karate_graph


@pytest.fixture(scope="session")
def karate():
    return karate_graph()


@pytest.fixture()
def rng():
    return np.random.default_rng(20260814)
