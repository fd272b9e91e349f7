"""
Tensor train subspace model and storage accounting.

A TT subspace is the column span of U = L(U1 U2 ... Un) for a chain of 3-way
cores Ui of shape (r_{i-1}, Ii, ri) with r0 = 1. When every L(Ui) has
orthonormal columns, so does U, and projection is simply U^T V(x).
"""
import struct
from typing import Literal, Sequence

import numpy as np

from config import ORTHONORMAL_TOL
from models import StorageReport
from services.tensor_ops import connect_chain, left_unfold, vectorize
from utils.errors import DataError, ModelFormatError, NumericError, UsageError

MODEL_MAGIC = b"TTSS"
MODEL_VERSION = 1


class TTSubspace:
    """Immutable chain of TT cores spanning a subspace of R^(I1*...*In)."""

    def __init__(self, cores: Sequence[np.ndarray], orthonormal: bool | None = None):
        if len(cores) == 0:
            raise DataError("A TT subspace needs at least one core")
        frozen = []
        for i, core in enumerate(cores):
            core = np.array(core, dtype=np.float64, copy=True)
            if core.ndim != 3:
                raise DataError(f"Core {i + 1} must have 3 modes, got shape {core.shape}")
            if min(core.shape) < 1:
                raise DataError(f"Core {i + 1} has an empty mode: {core.shape}")
            core.setflags(write=False)
            frozen.append(core)

        if frozen[0].shape[0] != 1:
            raise DataError(f"First core must have r0 = 1, got {frozen[0].shape[0]}")
        for i in range(1, len(frozen)):
            if frozen[i - 1].shape[2] != frozen[i].shape[0]:
                raise DataError(
                    f"Rank chain broken between core {i} {frozen[i - 1].shape} and core {i + 1} {frozen[i].shape}"
                )
        for i, core in enumerate(frozen):
            r_prev, size, r_next = core.shape
            if r_next > r_prev * size:
                raise DataError(f"Core {i + 1} rank {r_next} exceeds r_prev*I = {r_prev * size}")

        self._cores = tuple(frozen)
        self._basis = None

        error = self.core_orthonormality_error()
        if orthonormal is None:
            self._orthonormal = error <= ORTHONORMAL_TOL
        elif orthonormal and error > ORTHONORMAL_TOL:
            raise NumericError(f"Cores flagged orthonormal but max |L^T L - I| = {error:.3e}")
        else:
            self._orthonormal = bool(orthonormal)

    @classmethod
    def random(cls, dims: Sequence[int], ranks: Sequence[int], rng: np.random.Generator) -> "TTSubspace":
        """Left-orthonormal cores from QR of Gaussian matrices; ranks are (r1..rn)."""
        if len(dims) != len(ranks):
            raise UsageError("dims and ranks must have the same length")
        cores = []
        r_prev = 1
        for size, r_next in zip(dims, ranks):
            if not 1 <= r_next <= r_prev * size:
                raise UsageError(f"rank {r_next} infeasible after r_prev={r_prev}, I={size}")
            q, _ = np.linalg.qr(rng.standard_normal((r_prev * size, r_next)))
            cores.append(q.reshape(r_prev, size, r_next, order="F"))
            r_prev = r_next
        return cls(cores, orthonormal=True)

    # ------------------------------------------------------------------
    # Shape bookkeeping
    # ------------------------------------------------------------------

    @property
    def cores(self) -> tuple:
        return self._cores

    @property
    def dims(self) -> tuple:
        return tuple(core.shape[1] for core in self._cores)

    @property
    def ranks(self) -> tuple:
        """(r0=1, r1, ..., rn)."""
        return (1,) + tuple(core.shape[2] for core in self._cores)

    @property
    def n_modes(self) -> int:
        return len(self._cores)

    @property
    def ambient_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def rank(self) -> int:
        return self._cores[-1].shape[2]

    @property
    def orthonormal(self) -> bool:
        return self._orthonormal

    def core_orthonormality_error(self) -> float:
        """max over cores of max |L(Ui)^T L(Ui) - I|."""
        worst = 0.0
        for core in self._cores:
            left = left_unfold(core)
            gram = left.T @ left
            worst = max(worst, float(np.max(np.abs(gram - np.eye(gram.shape[0])))))
        return worst

    def __repr__(self) -> str:
        return f"TTSubspace(dims={self.dims}, ranks={self.ranks}, orthonormal={self._orthonormal})"

    # ------------------------------------------------------------------
    # Basis and projections
    # ------------------------------------------------------------------

    def materialize_basis(self) -> np.ndarray:
        """U = L(U1 ... Un), a (I1...In) x rn matrix."""
        if self._basis is None:
            basis = left_unfold(connect_chain(self._cores))
            basis.setflags(write=False)
            self._basis = basis
        return self._basis

    def as_vector(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.dims:
            return vectorize(x)[:, 0]
        if x.ndim == 1 and x.size == self.ambient_dim:
            return x
        if x.shape == (self.ambient_dim, 1):
            return x[:, 0]
        raise DataError(f"Sample of shape {x.shape} does not match subspace dims {self.dims}")

    def _require_orthonormal(self) -> None:
        if not self._orthonormal:
            raise NumericError("Projection requires a subspace with orthonormal cores")

    def project(self, x) -> np.ndarray:
        """Coefficients U^T V(x), length rn."""
        self._require_orthonormal()
        return self.materialize_basis().T @ self.as_vector(x)

    def reconstruct(self, coeffs) -> np.ndarray:
        """U @ coeffs as a flat vector."""
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape[0] != self.rank:
            raise DataError(f"Expected {self.rank} coefficients, got {coeffs.shape[0]}")
        return self.materialize_basis() @ coeffs

    def residual_norm_sq(self, x) -> float:
        """||U U^T V(x) - V(x)||^2."""
        self._require_orthonormal()
        vec = self.as_vector(x)
        basis = self.materialize_basis()
        residual = vec - basis @ (basis.T @ vec)
        return float(residual @ residual)

    def residual_norm_sq_batch(self, data: np.ndarray) -> np.ndarray:
        """Residuals of every column of a d x N matrix."""
        self._require_orthonormal()
        basis = self.materialize_basis()
        residual = data - basis @ (basis.T @ data)
        return np.einsum("ij,ij->j", residual, residual)


# ============================================================================
# PERSISTENCE
# ============================================================================

def serialize(s: TTSubspace) -> bytes:
    n = s.n_modes
    parts = [
        struct.pack("<4sII", MODEL_MAGIC, MODEL_VERSION, n),
        struct.pack(f"<{n + 1}I", *s.ranks),
        struct.pack(f"<{n}I", *s.dims),
    ]
    for core in s.cores:
        parts.append(np.asarray(core, dtype="<f8").tobytes(order="F"))
    parts.append(struct.pack("<B", 1 if s.orthonormal else 0))
    return b"".join(parts)


def _take(buffer: bytes, offset: int, size: int, what: str) -> tuple:
    if offset + size > len(buffer):
        raise ModelFormatError(f"Truncated model file while reading {what}")
    return buffer[offset:offset + size], offset + size


def read_subspace(buffer: bytes, offset: int = 0) -> tuple:
    """Decode one TTSS block starting at `offset`; returns (subspace, new offset)."""
    chunk, offset = _take(buffer, offset, 12, "header")
    magic, version, n = struct.unpack("<4sII", chunk)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"Bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"Unsupported model version {version}")
    if n < 1:
        raise ModelFormatError("Model has no cores")

    chunk, offset = _take(buffer, offset, 4 * (n + 1), "ranks")
    ranks = struct.unpack(f"<{n + 1}I", chunk)
    chunk, offset = _take(buffer, offset, 4 * n, "dims")
    dims = struct.unpack(f"<{n}I", chunk)
    if ranks[0] != 1 or any(r == 0 for r in ranks):
        raise ModelFormatError(f"Invalid rank vector {ranks}")
    if any(size == 0 for size in dims):
        raise ModelFormatError(f"Invalid dims {dims}")

    cores = []
    for i, size in enumerate(dims):
        shape = (ranks[i], size, ranks[i + 1])
        count = int(np.prod(shape))
        chunk, offset = _take(buffer, offset, 8 * count, f"core {i + 1}")
        cores.append(np.frombuffer(chunk, dtype="<f8").reshape(shape, order="F"))

    chunk, offset = _take(buffer, offset, 1, "orthonormal flag")
    flag = struct.unpack("<B", chunk)[0]
    try:
        subspace = TTSubspace(cores, orthonormal=bool(flag))
    except (DataError, NumericError) as e:
        raise ModelFormatError(f"Invalid subspace in model file: {e.detail}") from e
    return subspace, offset


def deserialize(buffer: bytes) -> TTSubspace:
    subspace, offset = read_subspace(buffer, 0)
    if offset != len(buffer):
        raise ModelFormatError(f"{len(buffer) - offset} trailing bytes after subspace")
    return subspace


# ============================================================================
# STORAGE / COMPRESSION ACCOUNTING
# ============================================================================

def _check_dims(dims: Sequence[int]) -> tuple:
    dims = tuple(int(s) for s in dims)
    if len(dims) == 0 or any(s < 1 for s in dims):
        raise UsageError(f"dims must be positive, got {dims}")
    return dims


def _check_ranks(ranks: Sequence[int], n: int) -> tuple:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != n:
        raise UsageError(f"expected {n} ranks, got {len(ranks)}")
    if any(r < 0 for r in ranks):
        raise UsageError(f"ranks must be non-negative, got {ranks}")
    return ranks


def _check_count(value: int, name: str) -> int:
    if value < 1:
        raise UsageError(f"{name} must be positive, got {value}")
    return int(value)


def integer_root(d: int, n: int) -> int:
    """I with I**n == d; raises when d is not a perfect n-th power."""
    _check_count(d, "d")
    _check_count(n, "n")
    guess = int(round(d ** (1.0 / n)))
    for candidate in (guess - 1, guess, guess + 1):
        if candidate >= 1 and candidate ** n == d:
            return candidate
    raise UsageError(f"d={d} is not a perfect {n}-th power")


def _report(method, subspace_dim: int, total: int, n_train: int, d: int) -> StorageReport:
    return StorageReport(
        method=method,
        subspace_dim=subspace_dim,
        total_storage=total,
        compression_ratio=total / (n_train * d),
    )


def _stiefel_dim(rows: int, cols: int) -> int:
    return rows * cols - cols * (cols + 1) // 2


def storage_pca(d: int, r: int, n_train: int = 1, include_coefficients: bool = False) -> StorageReport:
    """dim(PCA) = dr - r(r+1)/2, plus rN when coefficients are stored."""
    d = _check_count(d, "d")
    n_train = _check_count(n_train, "n_train")
    if r < 0:
        raise UsageError(f"rank must be non-negative, got {r}")
    dim = _stiefel_dim(d, r)
    total = dim + (r * n_train if include_coefficients else 0)
    return _report("PCA", dim, total, n_train, d)


def storage_tpca(
    dims: Sequence[int],
    ranks: Sequence[int],
    n_train: int = 1,
    variant: Literal["appendix", "main"] = "appendix",
    include_coefficients: bool = False,
) -> StorageReport:
    """
    Tucker-PCA parameter count.

    variant="appendix": sum_i (Ii ri - ri^2) + prod ri (one core);
    with coefficients the core term becomes N * prod ri.
    variant="main": r^(n+1) + n (I r - r(r+1)/2), defined only for equal
    dims and equal ranks (r cores of size r^n).
    """
    dims = _check_dims(dims)
    ranks = _check_ranks(ranks, len(dims))
    n_train = _check_count(n_train, "n_train")
    d = int(np.prod(dims))
    n = len(dims)

    if variant == "appendix":
        factors = sum(size * r - r * r for size, r in zip(dims, ranks))
        core = int(np.prod(ranks))
        dim = factors + core
        total = factors + n_train * core if include_coefficients else dim
    elif variant == "main":
        if len(set(dims)) != 1 or len(set(ranks)) != 1:
            raise UsageError("main-text T-PCA storage needs equal dims and equal ranks")
        size, r = dims[0], ranks[0]
        factors = n * _stiefel_dim(size, r)
        dim = r ** (n + 1) + factors
        total = factors + n_train * r ** n if include_coefficients else dim
    else:
        raise UsageError(f"unknown T-PCA variant {variant!r}")
    return _report("T-PCA", dim, total, n_train, d)


def storage_ttpca(
    dims: Sequence[int],
    ranks: Sequence[int],
    n_train: int = 1,
    include_coefficients: bool = False,
) -> StorageReport:
    """
    sum_i (r_{i-1} Ii ri - ri(ri+1)/2) for left-orthonormal cores, ranks (r1..rn).

    With equal dims and ranks this is d^(1/n) r (r(n-1)+1) - r(r+1)n/2.
    """
    dims = _check_dims(dims)
    ranks = _check_ranks(ranks, len(dims))
    n_train = _check_count(n_train, "n_train")
    d = int(np.prod(dims))

    dim = 0
    r_prev = 1
    for size, r in zip(dims, ranks):
        dim += _stiefel_dim(r_prev * size, r)
        r_prev = r
    if any(r == 0 for r in ranks):
        dim = 0
    total = dim + (ranks[-1] * n_train if include_coefficients else 0)
    return _report("TT-PCA", dim, total, n_train, d)


def manifold_dim_ttpca(dims: Sequence[int], ranks: Sequence[int]) -> int:
    """sum_i r_{i-1} Ii ri - sum_{i<n} ri^2 (manifold dimension of the TT model)."""
    dims = _check_dims(dims)
    ranks = _check_ranks(ranks, len(dims))
    full = (1,) + ranks
    cores = sum(full[i] * dims[i] * full[i + 1] for i in range(len(dims)))
    gauge = sum(r * r for r in ranks[:-1])
    return cores - gauge


def dim_pca(d: int, r: int) -> int:
    return storage_pca(d, r).subspace_dim


def dim_tpca_equal(d: int, n: int, r: int) -> int:
    """Main-text closed form r^(n+1) + n (d^(1/n) r - r(1+r)/2)."""
    size = integer_root(d, n)
    return r ** (n + 1) + n * (size * r - r * (1 + r) // 2)


def dim_ttpca_equal(d: int, n: int, r: int) -> int:
    """Closed form d^(1/n) r (r(n-1)+1) - r(1+r)n/2."""
    size = integer_root(d, n)
    if r == 0:
        return 0
    return size * r * (r * (n - 1) + 1) - r * (1 + r) * n // 2


def storage_embedding(
    method: Literal["KNN", "TNPE", "TT-NPE"], d: int, n: int, r: int, n_train: int
) -> StorageReport:
    """
    Storage of an embedding-based classifier including the embedded training set.

    KNN keeps the raw data (d N); TT-NPE keeps the TT cores plus r N
    coefficients; TNPE keeps n factor matrices plus r^n N coefficients.
    """
    d = _check_count(d, "d")
    n_train = _check_count(n_train, "n_train")
    if r < 0:
        raise UsageError(f"rank must be non-negative, got {r}")

    if method == "KNN":
        return _report("KNN", 0, d * n_train, n_train, d)
    size = integer_root(d, n)
    if method == "TT-NPE":
        dim = dim_ttpca_equal(d, n, r)
        return _report("TT-NPE", dim, dim + r * n_train, n_train, d)
    if method == "TNPE":
        dim = n * (size * r - r * (r + 1) // 2)
        return _report("TNPE", dim, r ** n * n_train + dim, n_train, d)
    raise UsageError(f"unknown embedding method {method!r}")


def storage_ttnpe(dims: Sequence[int], ranks: Sequence[int], n_train: int) -> StorageReport:
    """General-dims TT-NPE storage: TT-PCA parameter count plus rn N."""
    tt = storage_ttpca(dims, ranks, n_train=n_train, include_coefficients=True)
    return StorageReport(
        method="TT-NPE",
        subspace_dim=tt.subspace_dim,
        total_storage=tt.total_storage,
        compression_ratio=tt.compression_ratio,
    )


def storage_tnpe(dims: Sequence[int], r: int, n_train: int) -> StorageReport:
    """General-dims TNPE storage sum_i (Ii r - r(r+1)/2) + r^n N."""
    dims = _check_dims(dims)
    n_train = _check_count(n_train, "n_train")
    if r < 0:
        raise UsageError(f"rank must be non-negative, got {r}")
    dim = sum(_stiefel_dim(size, r) for size in dims)
    total = dim + r ** len(dims) * n_train
    return _report("TNPE", dim, total, n_train, int(np.prod(dims)))
