import numpy as np
import pytest

from services.synthetic import tt_class_dataset
from services.tt_model import TTSubspace
from utils.datasets import LabeledDataset, save_csv, split_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def random_subspace(rng):
    def _make(dims=(4, 4, 4), ranks=(2, 2, 3)):
        return TTSubspace.random(dims, ranks, rng)
    return _make


@pytest.fixture
def random_cores(rng):
    """Unconstrained Gaussian cores with the given dims and ranks (r1..rn)."""
    def _make(dims, ranks):
        full = (1,) + tuple(ranks)
        return [rng.standard_normal((full[i], size, full[i + 1])) for i, size in enumerate(dims)]
    return _make


@pytest.fixture
def two_class_tt():
    """Two classes drawn from distinct TT subspaces of R^(4x4x4)."""
    ds, subspaces = tt_class_dataset((4, 4, 4), (2, 2, 2), n_per_class=60, n_classes=2, seed=7)
    return ds, subspaces


@pytest.fixture
def line_dataset():
    # points 0, 1, 10 on a line
    return LabeledDataset(np.array([[0.0, 1.0, 10.0]]), np.array([0, 0, 1]))


@pytest.fixture
def synthetic_csv(tmp_path):
    """Noiseless two-class TT data (dims 4x4x4, ranks 2,2,2) as train/test CSV files."""
    ds, _ = tt_class_dataset((4, 4, 4), (2, 2, 2), n_per_class=40, n_classes=2, seed=13)
    train, test = split_dataset(ds, 0.25, seed=0)
    train_path, test_path = tmp_path / "train.csv", tmp_path / "test.csv"
    save_csv(train, train_path)
    save_csv(test, test_path)
    return train_path, test_path
