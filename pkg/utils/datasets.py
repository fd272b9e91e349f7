"""
Labeled datasets and their ingestion from IDX (MNIST) and CSV files.

A dataset stores one vectorized sample per column of a d x N float64 matrix.
Each column is read as a tensor of shape `dims` with the first index varying
fastest.
"""
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from utils.errors import DataError
from utils.logger import logger

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledDataset:
    data: np.ndarray          # d x N
    labels: np.ndarray        # N integer labels
    dims: tuple = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DataError(f"Dataset matrix must be 2-D (d x N), got shape {data.shape}")
        labels = np.asarray(self.labels).astype(np.int64, copy=False).reshape(-1)
        if labels.size != data.shape[1]:
            raise DataError(f"{labels.size} labels for {data.shape[1]} samples")
        dims = tuple(int(s) for s in self.dims) if self.dims else (data.shape[0],)
        if any(s < 1 for s in dims) or int(np.prod(dims)) != data.shape[0]:
            raise DataError(f"dims {dims} do not match sample dimension {data.shape[0]}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dims", dims)

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.data.shape[0]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.data[:, indices], self.labels[indices], self.dims)

    def class_data(self, label: int) -> np.ndarray:
        return self.data[:, self.labels == label]

    def sample(self, i: int) -> np.ndarray:
        """Sample i as a tensor of shape dims."""
        return np.reshape(self.data[:, i], self.dims, order="F")

    def with_dims(self, dims: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset(self.data, self.labels, tuple(dims))

    def with_data(self, data: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(data, self.labels, self.dims)

    def with_labels(self, labels) -> "LabeledDataset":
        return LabeledDataset(self.data, labels, self.dims)


# ============================================================================
# IDX (MNIST distribution format)
# ============================================================================

def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"Cannot read {path}: {e}") from e
    if path.suffix == ".gz":
        try:
            raw = gzip.decompress(raw)
        except OSError as e:
            raise DataError(f"Cannot decompress {path}: {e}") from e
    return raw


def read_idx(path, expected_magic: int) -> np.ndarray:
    # Data format (big endian):
    # u32     | magic: 0x0000 | type (0x08 = u8) | number of dimensions
    # u32[nd] | size of each dimension
    # u8[]    | payload, last dimension fastest
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataError(f"{path}: magic number mismatch (0x{magic:08x}, expected 0x{expected_magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(shape))
    payload = raw[header:]
    if len(payload) < count:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {count} bytes)")
    if len(payload) > count:
        logger.warning(f"{path}: ignoring {len(payload) - count} trailing bytes")
    return np.frombuffer(payload[:count], dtype=np.uint8).reshape(shape)


def load_idx(images_path, labels_path, dims: Sequence[int] | None = None) -> LabeledDataset:
    """
    Load an IDX image/label pair.

    Pixels are widened to float64 in [0, 255]. Each image keeps the file's
    byte order as its flat vector; without explicit `dims` a rows x cols image
    is read as a (cols, rows) tensor, which is the same bytes first-index-fastest.
    """
    images = read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[0] == 0:
        raise DataError(f"{images_path}: no images")

    n_images = images.shape[0]
    data = images.reshape(n_images, -1).T.astype(np.float64)
    if dims is None:
        dims = tuple(reversed(images.shape[1:])) if images.ndim > 1 else (1,)
    if int(np.prod(dims)) != data.shape[0]:
        raise DataError(f"dims {tuple(dims)} do not match image size {data.shape[0]}")
    logger.info(f"Loaded {n_images} images of size {data.shape[0]} from {images_path}")
    return LabeledDataset(data, labels.astype(np.int64), tuple(dims))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write u8 images (N x rows x cols) and labels (N) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | images.ndim) + struct.pack(f">{images.ndim}I", *images.shape)
    Path(images_path).write_bytes(header + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]) + labels.tobytes())


# ============================================================================
# CSV ("label,x0,x1,...", one sample per line)
# ============================================================================

def load_csv(path, dims: Sequence[int] | None = None) -> LabeledDataset:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise DataError(f"{path}: empty CSV file") from e
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: ragged row: {e}") from e
    except OSError as e:
        raise DataError(f"Cannot read {path}: {e}") from e

    if len(frame.columns) < 2 or frame.columns[0].strip() != "label":
        raise DataError(f"{path}: header must be 'label,x0,x1,...'")
    if len(frame) == 0:
        raise DataError(f"{path}: no samples")

    # Short rows come back as NaN even with keep_default_na=False
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        line = int(np.argmax(short)) + 2
        raise DataError(f"{path}: ragged row at line {line}")

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(
            f"{path}: non-numeric value {frame.iat[row, col]!r} at line {row + 2}, column {frame.columns[col]}"
        )

    # the string pass above only locates bad cells; values come from a correctly rounded parse
    values = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip").to_numpy(dtype=np.float64)
    labels = values[:, 0]
    if not np.all(labels == np.round(labels)):
        raise DataError(f"{path}: labels must be integers")
    data = values[:, 1:].T.copy()
    dims = tuple(dims) if dims else (data.shape[0],)
    logger.info(f"Loaded {data.shape[1]} samples of size {data.shape[0]} from {path}")
    return LabeledDataset(data, labels.astype(np.int64), dims)


def save_csv(ds: LabeledDataset, path) -> None:
    columns = {"label": ds.labels}
    for i in range(ds.ambient_dim):
        columns[f"x{i}"] = ds.data[i]
    pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g")


# ============================================================================
# NOISE, FILTERING AND SPLITTING
# ============================================================================

def add_noise(ds: LabeledDataset, sigma: float, seed: int) -> LabeledDataset:
    """Additive per-entry Gaussian noise N(0, sigma^2), reproducible from `seed`."""
    if sigma < 0:
        raise DataError(f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return ds
    rng = np.random.default_rng(seed)
    return ds.with_data(ds.data + rng.normal(0.0, sigma, size=ds.data.shape))


def filter_classes(ds: LabeledDataset, classes: Sequence[int]) -> tuple:
    """Keep only `classes` and relabel them 0..C-1 in sorted order; returns (dataset, original labels)."""
    wanted = np.array(sorted(set(int(c) for c in classes)), dtype=np.int64)
    mask = np.isin(ds.labels, wanted)
    if not mask.any():
        raise DataError(f"No samples with labels {wanted.tolist()}")
    kept = ds.subset(np.flatnonzero(mask))
    return kept.with_labels(np.searchsorted(wanted, kept.labels)), wanted


def relabel_dense(ds: LabeledDataset) -> tuple:
    """Map labels to 0..C-1 preserving order; returns (dataset, original labels)."""
    original = ds.classes
    return ds.with_labels(np.searchsorted(original, ds.labels)), original


def relabel_against(ds: LabeledDataset, original) -> LabeledDataset:
    """Map labels onto indices of the sorted label values `original` seen at fit time."""
    original = np.asarray(original, dtype=np.int64)
    unknown = np.setdiff1d(ds.classes, original)
    if unknown.size:
        raise DataError(f"Labels {unknown.tolist()} do not occur in the training set")
    return ds.with_labels(np.searchsorted(original, ds.labels))


def shuffle(ds: LabeledDataset, seed: int) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    return ds.subset(rng.permutation(ds.n_samples))


def split_dataset(ds: LabeledDataset, test_fraction: float, seed: int) -> tuple:
    """Seeded shuffle then split into (train, test)."""
    if not 0 < test_fraction < 1:
        raise DataError(f"test fraction must lie in (0, 1), got {test_fraction}")
    shuffled = shuffle(ds, seed)
    n_test = int(round(shuffled.n_samples * test_fraction))
    if n_test == 0 or n_test == shuffled.n_samples:
        raise DataError(f"Cannot split {shuffled.n_samples} samples with test fraction {test_fraction}")
    n_train = shuffled.n_samples - n_test
    return shuffled.subset(np.arange(n_train)), shuffled.subset(np.arange(n_train, shuffled.n_samples))


def cap_per_class(ds: LabeledDataset, cap: int | None) -> LabeledDataset:
    """Keep the first `cap` samples of each class in the current order."""
    if cap is None:
        return ds
    keep = []
    for label in ds.classes:
        keep.extend(np.flatnonzero(ds.labels == label)[:cap].tolist())
    return ds.subset(sorted(keep))
