import time
from types import SimpleNamespace

import pytest

from flowinv.dataset import default_spec
from flowinv.training import TrainConfig, train


@pytest.fixture(scope="session")
def quick_checkpoint():
    """Small-budget trained model for module-level behavior tests."""
    return train(default_spec(seed=0), TrainConfig(iterations=3000, seed=0))


@pytest.fixture(scope="session")
def default_run():
    """Full default training run, with its wall time for the budget checks."""
    t0 = time.time()
    ckpt = train(default_spec(seed=0), TrainConfig(seed=0))
    return SimpleNamespace(ckpt=ckpt, train_seconds=time.time() - t0)


@pytest.fixture(scope="session")
def default_checkpoint(default_run):
    return default_run.ckpt
