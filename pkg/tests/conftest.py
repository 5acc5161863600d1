import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wakesteer.farm import FarmLayout, TurbineSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

D = TurbineSpec().rotor_diameter


@pytest.fixture
def row3():
    return FarmLayout.row(3, 5 * D)


@pytest.fixture
def row2():
    return FarmLayout.row(2, 5 * D)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
