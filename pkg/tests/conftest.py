import pytest

from walnet.data import SyntheticSpec, generate_synthetic
from walnet.model import ModelConfig
from walnet.pgm import PgmConfig
from walnet.rcm import RoiParams
from walnet.training import TrainConfig


@pytest.fixture(scope="session")
def tiny_dataset():
    """26 synthetic 32x32 samples, enough for smoke-level training."""
    spec = SyntheticSpec(counts=(8, 10, 8), size=32, seed=3)
    return generate_synthetic(spec)


def small_model_config(**overrides):
    base = dict(input_size=32, widths=(4, 8, 16, 32), blocks=(1, 1, 1, 1),
                aspp_channels=8, decoder_channels=8, low_level_channels=8,
                roi=RoiParams(strategy="dilated_crop"))
    base.update(overrides)
    return ModelConfig(**base)


def small_train_config(**overrides):
    base = dict(epochs=2, batch_size=8, seed=0,
                model=small_model_config(),
                pgm=PgmConfig(felz_k=100, felz_sigma=0.8, felz_min_size=8))
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def tiny_train_config():
    return small_train_config()
