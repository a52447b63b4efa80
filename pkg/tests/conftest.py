import numpy as np
import pytest

from couponldm.core import PriceLadder


@pytest.fixture
def ladder():
    return PriceLadder.default()


def random_instance_arrays(rng, n, J, monotone=True):
    q = rng.random((n, J))
    if monotone:
        q = np.sort(q, axis=1)
    v = rng.random((n, J)) * 3.0
    return q, v
