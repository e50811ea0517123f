import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def randn(rng, *shape):
    return rng.standard_normal(shape)
