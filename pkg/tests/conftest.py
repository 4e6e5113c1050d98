import numpy as np
import pytest
from hypothesis import settings

from latentrl.core import RunConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def tiny_cfg():
    """A policy small enough for finite differences (under 5,000 parameters)."""
    return RunConfig(d=4, T=2, G=6, K=3, embed_dim=16, hidden=8, modulus=5,
                     iterations=5, batch_instances=2, eval_instances=20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
