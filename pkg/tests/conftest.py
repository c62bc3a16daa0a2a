import numpy as np
import pytest

from bgdm.schedule import make_linear_schedule


@pytest.fixture(scope="session")
def schedule():
    return make_linear_schedule()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
