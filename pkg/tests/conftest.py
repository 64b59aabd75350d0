import numpy as np
import pytest

from mindcross.config import ModelConfig, RunConfig, SyntheticConfig
from mindcross.data import generate_synthetic
from mindcross.models import build


@pytest.fixture
def tiny_config():
    """Create a small model config for two subjects."""
    return ModelConfig(in_dim=8, hidden=4, embed_dim=3, subjects=["subj1", "subj2"],
                       dropout_p=0.0, seed=0)


@pytest.fixture
def tiny_model(tiny_config):
    """Create a freshly built tiny model."""
    return build(tiny_config)


@pytest.fixture
def tiny_dataset():
    """Create a small synthetic dataset: 2 subjects, 4 classes, 8 trials each."""
    return generate_synthetic(SyntheticConfig(n_subjects=2, n_classes=4,
                                              trials_per_class_per_subject=8, m=6, d=4,
                                              latent_dim=3, seed=0))


@pytest.fixture
def small_run():
    """Create a fast run config."""
    return RunConfig(epochs_train=2, epochs_calib=2, batch_size=8, learning_rate=1e-2, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
