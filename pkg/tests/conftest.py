import time

import pytest

from irsr.data import make_synthetic_dataset
from irsr.model import ModelConfig
from irsr.training import TrainConfig, train

OVERFIT_MODEL = dict(
    scale=2, in_channels=1, cf=4, d_emb=8, n_groups=1, n_blocks=1, state_dim=2, expand=2
)


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """The 500-iteration single-pair fixture, trained once per session."""
    dataset = make_synthetic_dataset(1, 32, seed=0, scale=2)
    cfg = TrainConfig(
        lr=5e-3, batch=1, iterations=500, seed=0, lambda_loss=0.1, scale=2,
        patch_lr=16, patch_stride=16, checkpoint_interval=0,
    )
    start = time.perf_counter()
    result = train(
        cfg, ModelConfig(**OVERFIT_MODEL), dataset,
        out_dir=tmp_path_factory.mktemp("overfit"),
    )
    elapsed = time.perf_counter() - start
    return result, dataset, elapsed
