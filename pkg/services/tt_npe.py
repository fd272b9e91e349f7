"""
TT-NPE: neighborhood preserving embedding restricted to a TT subspace.

The KNN affinity graph gives Z = Y Y^T with Y = D - D S^T. The embedding
basis U is the TT-structured matrix closest to the eigenvectors V of the
smallest eigenvalues of Z, found by alternating Stiefel-constrained updates
of one core at a time.
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.spatial.distance import cdist

from config import SYMMETRY_TOL
from models import TTNPEConfig
from services import stiefel
from services.tensor_ops import connect_chain, left_refold, left_unfold, reshape_t, right_unfold
from services.tt_model import TTSubspace, read_subspace, serialize
from services.tt_pca import successive_svd
from utils.datasets import LabeledDataset
from utils.errors import DataError, ModelFormatError, NumericError, UsageError
from utils.logger import logger

EMBEDDING_MAGIC = b"TTNE"


@dataclass(frozen=True)
class AffinityMatrix:
    weights: scipy.sparse.csr_matrix  # N x N, zero diagonal
    k: int
    epsilon: float

    @property
    def n_samples(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class FittedTTNPE:
    subspace: TTSubspace
    embedded: np.ndarray       # T, rn x N
    labels: np.ndarray
    objective: float           # ||U - V||_F^2 at the last update
    trace_value: float = 0.0   # tr(U^T Z U)
    lower_bound: float = 0.0   # sum of the rn smallest eigenvalues of Z
    history: tuple = field(default=())
    sweeps: int = 0
    class_values: tuple = ()   # original label of each dense class index

    @property
    def n_samples(self) -> int:
        return self.embedded.shape[1]

    @property
    def label_values(self) -> np.ndarray:
        if self.class_values:
            return np.asarray(self.class_values, dtype=np.int64)
        return np.arange(int(self.labels.max()) + 1 if self.labels.size else 0, dtype=np.int64)


def _data_matrix(ds) -> np.ndarray:
    data = ds.data if isinstance(ds, LabeledDataset) else np.asarray(ds, dtype=np.float64)
    if data.ndim != 2:
        raise DataError(f"Expected a d x N matrix, got shape {data.shape}")
    return data


# ============================================================================
# GRAPH AND EIGEN TARGET
# ============================================================================

def build_affinity(ds, k: int, epsilon: float | str = "auto", normalize: bool = False) -> AffinityMatrix:
    """
    S_ij = exp(-||x_i - x_j||^2 / eps) for the k nearest j != i of each i.

    Ties at equal distance go to the smaller sample index. With eps "auto"
    the median retained squared distance is used (1 if that median is 0).
    """
    data = _data_matrix(ds)
    n_samples = data.shape[1]
    if n_samples < 2:
        raise DataError(f"Affinity graph needs at least 2 samples, got {n_samples}")
    if k < 1:
        raise UsageError(f"K must be >= 1, got {k}")
    if epsilon != "auto" and float(epsilon) <= 0:
        raise UsageError(f"epsilon must be positive, got {epsilon}")

    k = min(int(k), n_samples - 1)
    sq = cdist(data.T, data.T, "sqeuclidean")
    np.fill_diagonal(sq, np.inf)
    neighbors = np.argsort(sq, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n_samples), k)
    cols = neighbors.ravel()
    dist = sq[rows, cols]

    if epsilon == "auto":
        eps = float(np.median(dist))
        if eps == 0:
            logger.info("All retained neighbor distances are zero, using epsilon = 1")
            eps = 1.0
    else:
        eps = float(epsilon)

    weights = np.exp(-dist / eps)
    tiny = np.finfo(np.float64).tiny
    underflow = weights < tiny
    if underflow.any():
        logger.warning(f"{int(underflow.sum())} affinity weights underflowed, clamped to {tiny:.3g}")
        weights[underflow] = tiny

    if normalize:
        weights = (weights.reshape(n_samples, k) / weights.reshape(n_samples, k).sum(axis=1, keepdims=True)).ravel()

    s = scipy.sparse.csr_matrix((weights, (rows, cols)), shape=(n_samples, n_samples))
    logger.debug(f"Affinity graph: N={n_samples} K={k} eps={eps:.4g}")
    return AffinityMatrix(s, k, eps)


def build_z(ds, affinity) -> np.ndarray:
    """Z = Y Y^T with Y = D - D S^T."""
    data = _data_matrix(ds)
    s = affinity.weights if isinstance(affinity, AffinityMatrix) else affinity
    n_samples = data.shape[1]
    if s.shape != (n_samples, n_samples):
        raise DataError(f"Affinity of shape {s.shape} for {n_samples} samples")
    y = data - np.asarray((s @ data.T)).T
    z = y @ y.T
    return 0.5 * (z + z.T)


def smallest_eigvecs(z: np.ndarray, r: int) -> tuple:
    """
    Eigenvectors of the r smallest eigenvalues of symmetric z, ascending.

    Each column is signed so its largest-magnitude entry is positive.
    Returns (V, eigenvalues).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise DataError(f"Z must be square, got shape {z.shape}")
    d = z.shape[0]
    if not 1 <= r <= d:
        raise UsageError(f"Embedding dimension {r} outside 1..{d}")
    asymmetry = float(np.max(np.abs(z - z.T))) if d else 0.0
    if asymmetry > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(z)))):
        raise NumericError(f"Z is not symmetric (max |Z - Z^T| = {asymmetry:.3e})")

    try:
        values, vectors = scipy.linalg.eigh(z, subset_by_index=[0, r - 1])
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise NumericError(f"Eigen-solve failed: {e}") from e

    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(r)])
    signs[signs == 0] = 1.0
    return vectors * signs, values


# ============================================================================
# ALTERNATING CORE UPDATES
# ============================================================================

def check_ranks(dims: Sequence[int], ranks: Sequence[int]) -> None:
    dims = tuple(int(s) for s in dims)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(dims):
        raise UsageError(f"{len(ranks)} ranks given for {len(dims)} modes")
    d = int(np.prod(dims))
    if ranks[-1] > d:
        raise UsageError(f"Embedding dimension {ranks[-1]} exceeds d={d}")
    r_prev = 1
    for i, (size, r) in enumerate(zip(dims, ranks)):
        if r > r_prev * size:
            raise UsageError(f"rank r{i + 1}={r} exceeds r{i}*I{i + 1}={r_prev * size}")
        tail = int(np.prod(dims[i + 1:])) * ranks[-1]
        if r > tail:
            raise UsageError(f"rank r{i + 1}={r} exceeds I{i + 2}...In*rn={tail}")
        r_prev = r


def core_problem(cores: Sequence[np.ndarray], k: int, target: np.ndarray) -> stiefel.StiefelProblem:
    """
    Problem for core k (1-based) with the others fixed:
    A = I_{Ik} kron L(T_l), B = R(T_r), C = T_k(V).
    """
    dims = tuple(core.shape[1] for core in cores)
    r_n = cores[-1].shape[2]
    left = connect_chain(cores[:k - 1])
    right = connect_chain(cores[k:])
    left_matrix = left_unfold(left) if left is not None else np.ones((1, 1))
    a = np.kron(np.eye(dims[k - 1]), left_matrix)
    b = right_unfold(right) if right is not None else np.eye(r_n)
    return stiefel.StiefelProblem(a, b, reshape_t(target, k, dims, r_n))


def relaxed_objective(cores: Sequence[np.ndarray], target: np.ndarray) -> float:
    basis = left_unfold(connect_chain(cores))
    return float(np.sum((basis - target) ** 2))


def fit_to_target(
    cores: Sequence[np.ndarray], target: np.ndarray, cfg: TTNPEConfig
) -> tuple:
    """Alternating sweeps k = 1..n; returns (cores, history, sweeps)."""
    cores = [np.array(core, dtype=np.float64) for core in cores]
    history = [relaxed_objective(cores, target)]
    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        start = history[-1]
        for k in range(1, len(cores) + 1):
            r_prev, size, r_next = cores[k - 1].shape
            prob = core_problem(cores, k, target)
            result = stiefel.solve(prob, left_unfold(cores[k - 1]), cfg.solver)
            x = result.x
            if stiefel.feasibility_error(x) > 1e-12:
                x = stiefel.polar_factor(x)
            cores[k - 1] = left_refold(x, r_prev, size, r_next)
            history.append(prob.objective(x))
        end = history[-1]
        decrease = (start - end) / max(start, np.finfo(float).tiny)
        logger.info(f"TT-NPE sweep {sweeps}: objective {end:.6e} (relative decrease {decrease:.3e})")
        if end <= cfg.sweep_tol * max(history[0], 1.0) or decrease < cfg.sweep_tol:
            break
    else:
        logger.warning(f"TT-NPE stopped at max_sweeps={cfg.max_sweeps}")
    return cores, history, sweeps


def fit(ds: LabeledDataset, cfg: TTNPEConfig) -> FittedTTNPE:
    data = ds.data
    dims = ds.dims
    check_ranks(dims, cfg.ranks)
    if ds.n_samples < cfg.k + 1:
        raise DataError(f"TT-NPE with K={cfg.k} needs at least {cfg.k + 1} samples, got {ds.n_samples}")

    cores, _, _ = successive_svd(data, dims, ranks=cfg.ranks, exact_ranks=True)
    affinity = build_affinity(data, cfg.k, cfg.epsilon, cfg.normalize_affinity)
    z = build_z(data, affinity)
    target, eigenvalues = smallest_eigvecs(z, cfg.embedding_dim)

    cores, history, sweeps = fit_to_target(cores, target, cfg)
    subspace = TTSubspace(cores, orthonormal=True)
    basis = subspace.materialize_basis()
    trace_value = float(np.trace(basis.T @ z @ basis))
    logger.success(
        f"TT-NPE fitted: dims={dims} ranks={subspace.ranks} N={ds.n_samples} "
        f"objective={history[-1]:.3e} trace={trace_value:.4g} bound={float(eigenvalues.sum()):.4g}"
    )
    return FittedTTNPE(
        subspace=subspace,
        embedded=basis.T @ data,
        labels=ds.labels.copy(),
        objective=history[-1],
        trace_value=trace_value,
        lower_bound=float(eigenvalues.sum()),
        history=tuple(history),
        sweeps=sweeps,
    )


# ============================================================================
# EMBEDDING AND KNN CLASSIFICATION
# ============================================================================

def embed(model: FittedTTNPE, y) -> np.ndarray:
    """t_y = U^T vec(y)."""
    return model.subspace.project(y)


def embed_batch(model: FittedTTNPE, data: np.ndarray) -> np.ndarray:
    data = _data_matrix(data)
    if data.shape[0] != model.subspace.ambient_dim:
        raise DataError(f"Samples of dimension {data.shape[0]}, model expects {model.subspace.ambient_dim}")
    return model.subspace.materialize_basis().T @ data


def predict_knn(train: np.ndarray, labels: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """
    Majority label among the k nearest training columns for each query column.

    Distance ties go to the smaller training index and vote ties to the
    smaller label.
    """
    train = np.atleast_2d(np.asarray(train, dtype=np.float64))
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim == 1:
        queries = queries[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    if train.shape[0] != queries.shape[0]:
        raise DataError(f"Query dimension {queries.shape[0]} does not match training dimension {train.shape[0]}")
    if labels.size != train.shape[1]:
        raise DataError(f"{labels.size} labels for {train.shape[1]} training points")
    if not 1 <= k <= train.shape[1]:
        raise UsageError(f"K={k} must lie in 1..{train.shape[1]}")
    if labels.size and labels.min() < 0:
        raise DataError("Labels must be non-negative")

    dist = cdist(queries.T, train.T, "sqeuclidean")
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    votes = np.zeros((queries.shape[1], int(labels.max()) + 1), dtype=np.int64)
    np.add.at(votes, (np.repeat(np.arange(queries.shape[1]), k), labels[nearest].ravel()), 1)
    return np.argmax(votes, axis=1)


def classify_knn(model: FittedTTNPE, y, k: int) -> int:
    return int(predict_knn(model.embedded, model.labels, embed(model, y), k)[0])


def knn_baseline(ds_train: LabeledDataset, y, k: int) -> int:
    y = np.asarray(y, dtype=np.float64).reshape(-1, order="F")
    return int(predict_knn(ds_train.data, ds_train.labels, y, k)[0])


# ============================================================================
# PERSISTENCE ("TTNE" container)
# ============================================================================

def save_npe_model(model: FittedTTNPE, path) -> None:
    # magic | u64 length, TTSS block | u32 rn, u32 N | f64 T (F order) | i64 labels[N]
    # | u32 C, i64 label values[C] | f64 objective
    block = serialize(model.subspace)
    rows, cols = model.embedded.shape
    parts = [
        EMBEDDING_MAGIC,
        struct.pack("<Q", len(block)),
        block,
        struct.pack("<II", rows, cols),
        np.asarray(model.embedded, dtype="<f8").tobytes(order="F"),
        np.asarray(model.labels, dtype="<i8").tobytes(),
        struct.pack("<I", model.label_values.size),
        model.label_values.astype("<i8").tobytes(),
        struct.pack("<d", model.objective),
    ]
    Path(path).write_bytes(b"".join(parts))
    logger.success(f"Saved TT-NPE model ({cols} embedded samples) to {path}")


def load_npe_model(path) -> FittedTTNPE:
    buffer = Path(path).read_bytes()
    if buffer[:4] != EMBEDDING_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {buffer[:4]!r}, expected {EMBEDDING_MAGIC!r}")
    if len(buffer) < 12:
        raise ModelFormatError(f"{path}: truncated embedding file")
    (length,) = struct.unpack_from("<Q", buffer, 4)
    offset = 12 + length
    if offset > len(buffer):
        raise ModelFormatError(f"{path}: truncated subspace block")
    subspace, used = read_subspace(buffer[12:offset])
    if used != length:
        raise ModelFormatError(f"{path}: subspace block length mismatch")

    if offset + 8 > len(buffer):
        raise ModelFormatError(f"{path}: truncated embedding header")
    rows, cols = struct.unpack_from("<II", buffer, offset)
    offset += 8
    if rows != subspace.rank:
        raise ModelFormatError(f"{path}: embedding has {rows} rows for rank {subspace.rank}")
    values_at = offset + 8 * rows * cols + 8 * cols
    if values_at + 4 > len(buffer):
        raise ModelFormatError(f"{path}: truncated embedding data")
    (n_classes,) = struct.unpack_from("<I", buffer, values_at)
    expected = values_at + 4 + 8 * n_classes + 8
    if expected != len(buffer):
        raise ModelFormatError(f"{path}: expected {expected} bytes, found {len(buffer)}")

    embedded = np.frombuffer(buffer, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols, order="F")
    offset += 8 * rows * cols
    labels = np.frombuffer(buffer, dtype="<i8", count=cols, offset=offset).astype(np.int64)
    offset += 8 * cols + 4
    class_values = np.frombuffer(buffer, dtype="<i8", count=n_classes, offset=offset)
    offset += 8 * n_classes
    if np.any(np.diff(class_values) <= 0):
        raise ModelFormatError(f"{path}: class labels {class_values.tolist()} are not strictly increasing")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ModelFormatError(f"{path}: sample labels fall outside 0..{n_classes - 1}")
    (objective,) = struct.unpack_from("<d", buffer, offset)
    return FittedTTNPE(subspace, embedded.copy(), labels, float(objective),
                       class_values=tuple(int(v) for v in class_values))
