import numpy as np
import pytest

from wsibp import ModelConfig, sample_dataset


@pytest.fixture
def small_config():
    return ModelConfig(k_objects=3, k_attributes=3, k_extra=0, sigma=0.1,
                       beta=0.0, rho=0.0, max_iters=60, tol=1e-4, seed=0)


@pytest.fixture
def small_dataset(small_config):
    return sample_dataset(small_config, num_bags=10, instances_per_bag=12,
                          feature_dim=8, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
