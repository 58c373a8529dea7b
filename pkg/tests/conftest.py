import numpy as np
import pytest

from tcvos.rng import Rng


@pytest.fixture
def rng():
    return Rng(12345)


def rand64(rng: Rng, shape, std=1.0):
    return rng.normal(shape, std=std, dtype=np.float64)
