"""
TT-PCA: successive thresholded SVD producing an orthonormal TT subspace,
the per-class subspace-distance classifier and a standard PCA baseline.
"""
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from config import ZERO_SINGULAR_RTOL, worker_count
from models import TTPCAConfig
from services.tensor_ops import vectorize
from services.tt_model import TTSubspace, read_subspace, serialize
from utils.datasets import LabeledDataset
from utils.errors import DataError, ModelFormatError, NumericError, UsageError
from utils.logger import logger

CLASSIFIER_MAGIC = b"TTCL"


@dataclass(frozen=True)
class FittedTTPCA:
    subspace: TTSubspace
    representation: np.ndarray  # A, rn x N
    mean: np.ndarray | None = None
    degenerate: bool = False

    @property
    def ranks(self) -> tuple:
        return self.subspace.ranks

    def _centered(self, data: np.ndarray) -> np.ndarray:
        return data if self.mean is None else data - self.mean[:, None]

    def project(self, x) -> np.ndarray:
        vec = self.subspace.as_vector(x)
        if self.mean is not None:
            vec = vec - self.mean
        return self.subspace.project(vec)

    def reconstruct_all(self) -> np.ndarray:
        """U A (plus the mean when centered), d x N."""
        recon = self.subspace.materialize_basis() @ self.representation
        return recon if self.mean is None else recon + self.mean[:, None]

    def residual_norm_sq(self, x) -> float:
        vec = self.subspace.as_vector(x)
        if self.mean is not None:
            vec = vec - self.mean
        return self.subspace.residual_norm_sq(vec)

    def residuals(self, data: np.ndarray) -> np.ndarray:
        return self.subspace.residual_norm_sq_batch(self._centered(data))

    def denoise(self, data: np.ndarray) -> np.ndarray:
        """Orthogonal projection of every column onto the (affine) subspace."""
        basis = self.subspace.materialize_basis()
        projected = basis @ (basis.T @ self._centered(data))
        return projected if self.mean is None else projected + self.mean[:, None]


@dataclass(frozen=True)
class ClassModel:
    models: tuple
    dims: tuple
    labels: tuple = ()  # label value of each class as found in the training data

    @property
    def n_classes(self) -> int:
        return len(self.models)

    @property
    def label_values(self) -> np.ndarray:
        if self.labels:
            return np.asarray(self.labels, dtype=np.int64)
        return np.arange(self.n_classes, dtype=np.int64)

    def _vector(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape == self.dims:
            return vectorize(y)[:, 0]
        if y.ndim == 1 and y.size == int(np.prod(self.dims)):
            return y
        raise DataError(f"Sample of shape {y.shape} does not match model dims {self.dims}")

    def residuals(self, y) -> np.ndarray:
        vec = self._vector(y)
        return np.array([m.residual_norm_sq(vec) for m in self.models])


@dataclass(frozen=True)
class PCAFit:
    basis: np.ndarray          # d x r, orthonormal columns
    coefficients: np.ndarray   # r x N
    singular_values: np.ndarray


# ============================================================================
# SUCCESSIVE SVD
# ============================================================================

def _complete_columns(u: np.ndarray, count: int) -> np.ndarray:
    """Extend orthonormal columns of u to `count` columns."""
    if u.shape[1] >= count:
        return u[:, :count]
    complement = scipy.linalg.null_space(u.T) if u.shape[1] else np.eye(u.shape[0])
    return np.hstack([u, complement[:, :count - u.shape[1]]])


def _thin_svd(matrix: np.ndarray) -> tuple:
    try:
        return scipy.linalg.svd(matrix, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.warning("gesdd did not converge, retrying with gesvd")
    try:
        return scipy.linalg.svd(matrix, full_matrices=False, lapack_driver="gesvd")
    except np.linalg.LinAlgError as e:
        raise NumericError(f"SVD of a {matrix.shape[0]}x{matrix.shape[1]} unfolding did not converge: {e}") from e


def successive_svd(
    data: np.ndarray,
    dims: Sequence[int],
    tau: float | None = None,
    ranks: Sequence[int] | None = None,
    exact_ranks: bool = False,
) -> tuple:
    """
    Left-to-right sweep over modes 1..n of the (I1, ..., In, N) data tensor.

    At step i the carry is reshaped to (r_{i-1} Ii) x rest, its left singular
    vectors above tau*sigma_max (or the top ri) become core i, and the
    projected carry moves on. Returns (cores, A, degenerate).

    With `exact_ranks` the requested ranks are kept even past the numerical
    rank of the carry, completing each core with orthonormal columns.
    """
    dims = tuple(int(s) for s in dims)
    if (tau is None) == (ranks is None):
        raise UsageError("exactly one of tau or ranks must be given")
    if ranks is not None and len(ranks) != len(dims):
        raise UsageError(f"{len(ranks)} ranks given for {len(dims)} modes")
    d, n_samples = data.shape
    if n_samples == 0:
        raise DataError("Cannot fit a subspace to an empty dataset")
    if d != int(np.prod(dims)):
        raise DataError(f"Sample dimension {d} does not match dims {dims}")

    cores = []
    degenerate = False
    r_prev = 1
    carry = np.reshape(data, (dims[0], -1), order="F")
    for i, size in enumerate(dims):
        rows = r_prev * size
        u, s, _ = _thin_svd(carry)
        sigma_max = s[0] if s.size else 0.0
        nonzero = int(np.count_nonzero(s > ZERO_SINGULAR_RTOL * sigma_max)) if sigma_max > 0 else 0

        if tau is not None:
            keep = int(np.count_nonzero(s > max(tau * sigma_max, ZERO_SINGULAR_RTOL * sigma_max)))
        elif exact_ranks:
            keep = int(ranks[i])
            if keep > rows:
                raise UsageError(f"rank r{i + 1}={keep} exceeds r{i}*I{i + 1}={rows}")
        else:
            keep = min(int(ranks[i]), nonzero)
            if keep < ranks[i]:
                logger.warning(f"Mode {i + 1}: rank {ranks[i]} clamped to {keep} nonzero singular values")

        if keep == 0:
            if sigma_max == 0:
                degenerate = True
                logger.warning(f"Mode {i + 1}: all singular values are zero, keeping one basis vector")
            else:
                logger.warning(f"Mode {i + 1}: threshold removed every singular value, clamping rank to 1")
            keep = 1

        basis = _complete_columns(u, keep)
        cores.append(np.reshape(basis, (r_prev, size, keep), order="F"))
        carry = basis.T @ carry  # S~ V^T for the kept singular triplets
        r_prev = keep
        if i + 1 < len(dims):
            carry = np.reshape(carry, (r_prev * dims[i + 1], -1), order="F")

    return cores, carry, degenerate


# ============================================================================
# FITTING / CLASSIFICATION
# ============================================================================

def _fit_matrix(data: np.ndarray, dims: Sequence[int], cfg: TTPCAConfig, exact_ranks: bool = False) -> FittedTTPCA:
    mean = None
    if cfg.center:
        mean = data.mean(axis=1)
        data = data - mean[:, None]
    cores, representation, degenerate = successive_svd(
        data, dims, tau=cfg.tau, ranks=cfg.ranks, exact_ranks=exact_ranks
    )
    subspace = TTSubspace(cores, orthonormal=True)
    logger.info(f"TT-PCA fitted: dims={subspace.dims} ranks={subspace.ranks} N={data.shape[1]}")
    return FittedTTPCA(subspace, representation, mean, degenerate)


def fit(data, cfg: TTPCAConfig, dims: Sequence[int] | None = None, exact_ranks: bool = False) -> FittedTTPCA:
    """Fit a TT subspace to a LabeledDataset or a d x N matrix (with `dims`)."""
    if isinstance(data, LabeledDataset):
        return _fit_matrix(data.data, data.dims, cfg, exact_ranks)
    if dims is None:
        raise UsageError("dims are required when fitting a raw matrix")
    return _fit_matrix(np.asarray(data, dtype=np.float64), dims, cfg, exact_ranks)


def _check_dense_labels(ds: LabeledDataset) -> int:
    if ds.n_samples == 0:
        raise DataError("Cannot fit a classifier to an empty dataset")
    n_classes = int(ds.labels.max()) + 1
    counts = np.bincount(ds.labels, minlength=n_classes)
    if ds.labels.min() < 0 or np.any(counts == 0):
        empty = np.flatnonzero(counts == 0).tolist()
        raise DataError(f"Labels must be dense 0..C-1; classes {empty} have no samples")
    return n_classes


def _fit_per_class(ds: LabeledDataset, fit_one) -> ClassModel:
    n_classes = _check_dense_labels(ds)
    with ThreadPoolExecutor(max_workers=worker_count(n_classes)) as pool:
        models = list(pool.map(lambda c: fit_one(ds.class_data(c)), range(n_classes)))
    return ClassModel(tuple(models), ds.dims)


def fit_classifier(ds: LabeledDataset, cfg: TTPCAConfig) -> ClassModel:
    """One TT-PCA subspace per class label 0..C-1."""
    return _fit_per_class(ds, lambda data: _fit_matrix(data, ds.dims, cfg))


def classify(model: ClassModel, y) -> int:
    """argmin_j ||U_j U_j^T V(y) - V(y)||^2; ties go to the smallest label."""
    return int(np.argmin(model.residuals(y)))


def classify_batch(model: ClassModel, data: np.ndarray) -> np.ndarray:
    """Labels for every column of a d x N matrix."""
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] != int(np.prod(model.dims)):
        raise DataError(f"Samples of size {data.shape[0]} do not match model dims {model.dims}")
    residuals = np.vstack([m.residuals(data) for m in model.models])
    return np.argmin(residuals, axis=0)


def reconstruction_error(model: ClassModel, clean: np.ndarray, noisy: np.ndarray, labels: np.ndarray) -> float:
    """||clean - P(noisy)||_F / ||clean||_F, projecting each sample onto its true class subspace."""
    denoised = np.empty_like(noisy)
    for label, fitted in enumerate(model.models):
        mask = labels == label
        if mask.any():
            denoised[:, mask] = fitted.denoise(noisy[:, mask])
    norm = np.linalg.norm(clean)
    if norm == 0:
        return float(np.linalg.norm(denoised))
    return float(np.linalg.norm(clean - denoised) / norm)


# ============================================================================
# STANDARD PCA BASELINE
# ============================================================================

def pca_baseline_fit(data: np.ndarray, r: int) -> PCAFit:
    """Top-r left singular vectors of D (no centering) and the coefficients U^T D."""
    data = np.asarray(data, dtype=np.float64)
    d, n_samples = data.shape
    if not 1 <= r <= min(d, n_samples):
        raise UsageError(f"PCA rank {r} out of range [1, {min(d, n_samples)}]")
    u, s, _ = _thin_svd(data)
    basis = u[:, :r]
    return PCAFit(basis, basis.T @ data, s)


def fit_pca_classifier(ds: LabeledDataset, r: int, center: bool = False) -> ClassModel:
    """Per-class PCA subspaces, each stored as a single-core TT subspace."""

    def fit_one(data: np.ndarray) -> FittedTTPCA:
        mean = None
        if center:
            mean = data.mean(axis=1)
            data = data - mean[:, None]
        rank = min(r, *data.shape)
        if rank < r:
            logger.warning(f"PCA rank {r} clamped to {rank} for a class with {data.shape[1]} samples")
        pca = pca_baseline_fit(data, rank)
        core = pca.basis.reshape(1, data.shape[0], rank, order="F")
        return FittedTTPCA(TTSubspace([core], orthonormal=True), pca.coefficients, mean)

    return _fit_per_class(ds, fit_one)


# ============================================================================
# PERSISTENCE ("TTCL" container)
# ============================================================================

def save_class_model(model: ClassModel, path) -> None:
    # magic | u32 C | C x (u64 length, TTSS block) | C x (u32 rows, u32 cols, f64 A)
    # trailer: u32 n, u32 dims[n], C x i64 label, u8 centered, centered -> C x f64 mean[d]
    parts = [CLASSIFIER_MAGIC, struct.pack("<I", model.n_classes)]
    for fitted in model.models:
        block = serialize(fitted.subspace)
        parts.append(struct.pack("<Q", len(block)))
        parts.append(block)
    for fitted in model.models:
        rows, cols = fitted.representation.shape
        parts.append(struct.pack("<II", rows, cols))
        parts.append(np.asarray(fitted.representation, dtype="<f8").tobytes(order="F"))
    parts.append(struct.pack(f"<I{len(model.dims)}I", len(model.dims), *model.dims))
    parts.append(model.label_values.astype("<i8").tobytes())
    centered = any(fitted.mean is not None for fitted in model.models)
    parts.append(struct.pack("<B", 1 if centered else 0))
    if centered:
        d = int(np.prod(model.dims))
        for fitted in model.models:
            mean = fitted.mean if fitted.mean is not None else np.zeros(d)
            parts.append(np.asarray(mean, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))
    logger.success(f"Saved {model.n_classes}-class TT-PCA model to {path}")


def _unpack(buffer: bytes, offset: int, fmt: str) -> tuple:
    size = struct.calcsize(fmt)
    if offset + size > len(buffer):
        raise ModelFormatError("Truncated classifier file")
    return struct.unpack_from(fmt, buffer, offset), offset + size


def _read_f64(buffer: bytes, offset: int, count: int) -> tuple:
    end = offset + 8 * count
    if end > len(buffer):
        raise ModelFormatError("Truncated classifier file")
    return np.frombuffer(buffer[offset:end], dtype="<f8"), end


def load_class_model(path) -> ClassModel:
    buffer = Path(path).read_bytes()
    if buffer[:4] != CLASSIFIER_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {buffer[:4]!r}, expected {CLASSIFIER_MAGIC!r}")
    (n_classes,), offset = _unpack(buffer, 4, "<I")
    if n_classes == 0:
        raise ModelFormatError(f"{path}: classifier has no classes")

    subspaces = []
    for _ in range(n_classes):
        (length,), offset = _unpack(buffer, offset, "<Q")
        end = offset + length
        if end > len(buffer):
            raise ModelFormatError(f"{path}: truncated subspace block")
        subspace, used = read_subspace(buffer[offset:end])
        if used != length:
            raise ModelFormatError(f"{path}: subspace block length mismatch")
        subspaces.append(subspace)
        offset = end

    representations = []
    for subspace in subspaces:
        (rows, cols), offset = _unpack(buffer, offset, "<II")
        if rows != subspace.rank:
            raise ModelFormatError(f"{path}: representation has {rows} rows for rank {subspace.rank}")
        values, offset = _read_f64(buffer, offset, rows * cols)
        representations.append(values.reshape(rows, cols, order="F"))

    (n_dims,), offset = _unpack(buffer, offset, "<I")
    dims, offset = _unpack(buffer, offset, f"<{n_dims}I")
    labels, offset = _unpack(buffer, offset, f"<{n_classes}q")
    if np.any(np.diff(labels) <= 0):
        raise ModelFormatError(f"{path}: class labels {list(labels)} are not strictly increasing")
    (centered,), offset = _unpack(buffer, offset, "<B")
    d = int(np.prod(dims))
    means = [None] * n_classes
    if centered:
        for c in range(n_classes):
            means[c], offset = _read_f64(buffer, offset, d)
    if offset != len(buffer):
        raise ModelFormatError(f"{path}: {len(buffer) - offset} trailing bytes")

    models = tuple(
        FittedTTPCA(subspace, representation, mean)
        for subspace, representation, mean in zip(subspaces, representations, means)
    )
    return ClassModel(models, tuple(dims), tuple(labels))
