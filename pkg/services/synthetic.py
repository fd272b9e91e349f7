"""
Synthetic labeled data drawn from random orthonormal TT subspaces.
"""
from typing import Sequence

import numpy as np

from services.tt_model import TTSubspace
from utils.datasets import LabeledDataset


def tt_class_dataset(
    dims: Sequence[int],
    ranks: Sequence[int],
    n_per_class: int,
    n_classes: int = 2,
    noise_sigma: float = 0.0,
    seed: int = 0,
    scale: float = 1.0,
) -> tuple:
    """
    `n_per_class` samples U_c a per class, with a ~ N(0, scale^2) and U_c a
    random TT subspace of the given ranks. Returns (dataset, subspaces).
    """
    rng = np.random.default_rng(seed)
    subspaces = [TTSubspace.random(dims, ranks, rng) for _ in range(n_classes)]
    columns, labels = [], []
    for label, subspace in enumerate(subspaces):
        coeffs = rng.normal(0.0, scale, size=(subspace.rank, n_per_class))
        columns.append(subspace.reconstruct(coeffs))
        labels.append(np.full(n_per_class, label, dtype=np.int64))
    data = np.hstack(columns)
    if noise_sigma > 0:
        data = data + rng.normal(0.0, noise_sigma, size=data.shape)
    return LabeledDataset(data, np.concatenate(labels), tuple(dims)), subspaces
