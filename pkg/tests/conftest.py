import numpy as np
import pytest

from loopsoup.lattice import build_domain


@pytest.fixture
def two_site():
    return build_domain({"sites": [[0, 0], [1, 0]]})


@pytest.fixture
def one_site():
    return build_domain({"sites": [[0, 0]]})


@pytest.fixture
def square3():
    return build_domain({"rectangle": {"x0": 0, "y0": 0, "x1": 2, "y1": 2}})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
