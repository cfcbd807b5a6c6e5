import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _reset_model_counters():
    from bidimt import model

    model.reset_counters()
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
