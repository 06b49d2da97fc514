# tests/conftest.py
import os
import sys

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from recps.schemas.run import RunConfig
from recps.schemas.training import TrainConfig
from recps.services.dataset import dataset_from_records, split_leave_two_out
from recps.services.shadow import build_ensemble
from recps.services.toy import generate_toy_dataset

FAST_TRAIN = TrainConfig(
    dim=8,
    layers=1,
    max_epochs=3,
    patience=0,
    optimizer="adam",
    learning_rate=0.01,
    negative_ratio=1,
    eval_k=10,
)

# Flags shared by fast end-to-end runs on the small toy dataset
FAST_RUN = {
    "family": "mf-logit",
    "dim": 8,
    "layers": 1,
    "max_epochs": 3,
    "patience": 0,
    "optimizer": "adam",
    "learning_rate": 0.01,
    "batch_size": 256,
    "negative_ratio": 1,
    "eval_k": 10,
    "hr_k": 10,
    "num_shadows": 4,
    "out_sample_cap": 2000,
    "eval_members": 200,
    "eval_nonmembers": 200,
    "min_interactions": 20,
}


@pytest.fixture(scope="session")
def toy_dataset():
    """The bundled 200 x 100 toy log, split leave-two-out."""
    return split_leave_two_out(generate_toy_dataset())


@pytest.fixture(scope="session")
def small_dataset():
    """40 users over 100 items, split leave-two-out."""
    return split_leave_two_out(generate_toy_dataset(num_users=40, num_items=100, seed=3))


@pytest.fixture(scope="session")
def small_ensemble(small_dataset):
    """Four fast mf-logit shadows over the small dataset, shared across tests."""
    return build_ensemble(small_dataset, 4, FAST_TRAIN, seed=7, family="mf-logit")


@pytest.fixture
def tiny_records():
    return [
        ("alice", "matrix", 5, 1),
        ("alice", "alien", 4, 2),
        ("alice", "heat", 3, 3),
        ("bob", "alien", 2, 10),
        ("bob", "heat", 4, 11),
        ("bob", "up", 5, 12),
        ("bob", "matrix", 1, 13),
    ]


@pytest.fixture
def tiny_dataset(tiny_records):
    return split_leave_two_out(dataset_from_records(tiny_records))


@pytest.fixture
def fast_config():
    return FAST_TRAIN


@pytest.fixture
def fast_run_config(tmp_path):
    return RunConfig(**FAST_RUN, output_dir=str(tmp_path / "run"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
