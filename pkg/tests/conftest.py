import numpy as np
import pytest

from diffsync import make_schedule


@pytest.fixture(scope="session")
def sched30():
    return make_schedule(num_steps=30)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
