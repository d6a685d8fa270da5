import numpy as np
import pytest

from c3rec.config import LossConfig, TrainConfig
from c3rec.data import generate_synthetic, leave_one_out_split


def small_config(**overrides) -> TrainConfig:
    """A cheap config for unit tests: tiny model, no dropout noise."""
    base = dict(embedding_dim=8, heads=2, layers=1, dropout=0.0,
                epochs=2, batch_size=16, early_stop_patience=100,
                eval_negatives=20, seed=0)
    base.update(overrides)
    loss = base.pop("loss", LossConfig())
    return TrainConfig(loss=loss, **base)


@pytest.fixture(scope="session")
def tiny_ds():
    ds = generate_synthetic(30, 60, 12, seed=3)
    leave_one_out_split(ds, seed=3)
    return ds


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
