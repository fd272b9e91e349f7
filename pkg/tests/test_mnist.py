import os
from pathlib import Path

import pytest

from models import ExperimentConfig
from services import experiments

MNIST_DIR = os.getenv("TTSS_MNIST_DIR")

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not MNIST_DIR, reason="TTSS_MNIST_DIR is not set"),
]


def _idx(stem: str) -> str:
    for name in (stem, f"{stem}.gz"):
        path = Path(MNIST_DIR) / name
        if path.exists():
            return str(path)
    pytest.skip(f"{stem} not found in {MNIST_DIR}")


def test_ttnpe_error_dips_below_raw_knn():
    common = dict(
        train=_idx("train-images-idx3-ubyte"),
        train_labels=_idx("train-labels-idx1-ubyte"),
        test=_idx("t10k-images-idx3-ubyte"),
        test_labels=_idx("t10k-labels-idx1-ubyte"),
        dims=(4, 7, 4, 7),
        classes=[1, 2],
        train_cap=200,
        test_cap=200,
        knn_k=[5],
        seed=0,
    )
    data = experiments.prepare_data(ExperimentConfig(method="knn", **common))
    npe = experiments.run_sweep(
        ExperimentConfig(method="ttnpe", ranks=[(1, 1, 1, 1), (2, 4, 4, 4), (4, 8, 8, 8), (4, 16, 16, 16)],
                         max_sweeps=5, **common),
        data,
    )
    knn = experiments.run_sweep(ExperimentConfig(method="knn", **common), data)

    ratios = [row.compression_ratio for row in npe]
    assert min(ratios) < 0.05 and max(ratios) < 1.0
    assert min(row.classification_error for row in npe) < knn[0].classification_error
