import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from config import reset_config
from free_group import StepDistribution

settings.register_profile("mfbrw", suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("mfbrw")


@pytest.fixture(autouse=True)
def default_config():
    """Every test starts from the built-in defaults, without reading config.yaml"""
    config = reset_config(None)
    yield config
    reset_config(None)


@pytest.fixture
def iso2():
    return StepDistribution.isotropic(2)


@pytest.fixture
def iso3():
    return StepDistribution.isotropic(3)


@pytest.fixture
def lazy2():
    return StepDistribution.isotropic(2, mu_e=0.2)


@pytest.fixture
def aniso2():
    return StepDistribution.from_generator_weights(2, [0.35, 0.15])


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
