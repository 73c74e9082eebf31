import numpy as np
import pytest

from cascadet.data.generator import generate_dataset
from cascadet.data.types import GeneratorConfig


@pytest.fixture(scope="session")
def small_dataset():
    """200-sample default-structure dataset, enough for schema-level tests."""
    return generate_dataset(GeneratorConfig(n_samples=200, seed=7))


@pytest.fixture(scope="session")
def small_config():
    return GeneratorConfig(n_samples=200, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
