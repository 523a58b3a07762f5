import numpy as np
import pytest

from cisrec.dataset import ImplicitDataset, to_implicit
from cisrec.synthetic import planted_partition


@pytest.fixture
def planted():
    return planted_partition(n_groups=2, users_per_group=12, items_per_group=6, picks_per_user=4, seed=3)


@pytest.fixture
def planted_data(planted):
    return to_implicit(planted.ratings, 4.0)


@pytest.fixture
def tiny():
    """
    3 users x 4 items

        u0: i0 i1
        u1: i1 i2
        u2: i2 i3 i0
    """
    pairs = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (2, 0)]
    return ImplicitDataset(pairs, 3, 4, ["a", "b", "c"], ["w", "x", "y", "z"])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
