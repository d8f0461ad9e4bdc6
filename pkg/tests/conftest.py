import io

import numpy as np
import pytest
from rich.console import Console

from privclust.dataset import Dataset, FeatureSchema, make_blobs
from privclust.schemas import BlobSpec


@pytest.fixture
def console():
    return Console(file=io.StringIO(), width=200)


@pytest.fixture
def max_threads():
    return 4


@pytest.fixture
def seven_blob_spec():
    centers = (15.0 * np.eye(8)[:7]).tolist()
    return BlobSpec(k_true=7, n_per_cluster=300, dim=8, centers=centers, spread=1.0, seed=0)


@pytest.fixture
def seven_blobs(seven_blob_spec):
    return make_blobs(seven_blob_spec)


@pytest.fixture
def small_blobs():
    return make_blobs(
        BlobSpec(
            k_true=3,
            n_per_cluster=40,
            dim=2,
            centers=[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]],
            spread=0.5,
            seed=3,
        )
    )


@pytest.fixture
def two_blobs():
    return make_blobs(
        BlobSpec(
            k_true=2,
            n_per_cluster=300,
            dim=2,
            centers=[[-6.0, 0.0], [6.0, 0.0]],
            spread=1.0,
            seed=11,
        )
    )


@pytest.fixture
def categorical_dataset():
    rng = np.random.default_rng(5)
    rows = np.column_stack([rng.integers(0, 3, 200), rng.integers(0, 2, 200)])
    schema = [
        FeatureSchema(name="color", kind="categorical", state_count=3, categories=("r", "g", "b")),
        FeatureSchema(name="flag", kind="categorical", state_count=2, categories=("no", "yes")),
    ]
    return Dataset(rows, schema, name="categorical")


@pytest.fixture
def blob_config(tmp_path):
    return {
        "name": "blobs_test",
        "dataset": {
            "type": "blobs",
            "blobs": {
                "k_true": 3,
                "n_per_cluster": 80,
                "dim": 2,
                "centers": [[0.0, 0.0], [12.0, 0.0], [0.0, 12.0]],
                "spread": 0.8,
                "seed": 1,
            },
        },
        "owners": {"shares": [0.5, 0.5]},
        "epsilons": [1.0, 5.0],
        "shared_fractions": [0.5],
        "seeds": [0],
        "selection": {"k_range": [2, 6], "kmeans_restarts": 2},
        "attack": {"case_size": 40, "control_size": 40},
        "workers": 2,
        "output_dir": str(tmp_path / "runs"),
    }
