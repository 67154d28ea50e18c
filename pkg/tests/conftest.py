"""Shared fixtures: a calibrated model and small hand-built scenes."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from roborun.bench import load_model
from roborun.config import Physics
from roborun.governor import LatencyModel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def model() -> LatencyModel:
    return load_model()


@pytest.fixture(scope="session")
def physics_full() -> Physics:
    return Physics(scale=1.0)


@pytest.fixture(scope="session")
def physics_desk() -> Physics:
    return Physics(scale=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
