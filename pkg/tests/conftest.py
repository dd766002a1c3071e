import numpy as np
import pytest
import torch

from cmgl.config import RunConfig
from cmgl.data import SyntheticSpec, generate_synthetic

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_dataset():
    """90-sample, 3-class cohort: two informative modalities, one pure noise."""
    spec = SyntheticSpec(
        n_samples=90,
        num_classes=3,
        modality_dims=(10, 10, 10),
        informative_mask=(1, 1, 0),
        class_separation=6.0,
        noise_scale=1.0,
        seed=3,
    )
    return generate_synthetic(spec)


@pytest.fixture()
def fast_config():
    """Config trimmed for test speed; structure identical to the defaults."""
    config = RunConfig()
    config.stage1.epochs = 15
    config.stage2.epochs = 20
    config.stage2.patience = 10
    config.graph.k_candidates = (3, 5)
    config.graph.warmup_epochs = 3
    config.cv.n_folds = 3
    return config


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
