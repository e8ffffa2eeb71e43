import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from battfd.params import CellParams

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return CellParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
