"""
Dense tensor algebra for tensor train subspaces.

Tensors are plain float64 numpy arrays. Every flattening in this module uses
the first-index-fastest convention (numpy ``order="F"``): entry
X(i1, ..., in) lives at flat position i1 + I1*i2 + I1*I2*i3 + ...

Modes are numbered from 1, matching the usual mode-i unfolding notation.
"""
from typing import Sequence

import numpy as np

from utils.errors import DataError

DenseTensor = np.ndarray
Matrix = np.ndarray


def as_tensor(data, shape: Sequence[int] | None = None) -> DenseTensor:
    """Build a float64 tensor, optionally from flat first-index-fastest data."""
    array = np.asarray(data, dtype=np.float64)
    if shape is None:
        if any(size < 1 for size in array.shape):
            raise DataError(f"Tensor shape must have positive entries, got {array.shape}")
        return array
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise DataError(f"Tensor shape must have positive entries, got {shape}")
    if array.size != int(np.prod(shape)):
        raise DataError(
            f"Data length {array.size} does not match shape {shape} (expected {int(np.prod(shape))})"
        )
    return array.reshape(shape, order="F")


def vectorize(t: DenseTensor) -> Matrix:
    """Column vector V(t) of length prod(shape)."""
    return np.reshape(t, (-1, 1), order="F")


def _check_mode(t: DenseTensor, mode: int) -> None:
    if not 1 <= mode <= t.ndim:
        raise DataError(f"Mode {mode} out of range for a {t.ndim}-way tensor")


def mode_unfold(t: DenseTensor, mode: int) -> Matrix:
    """Mode-i unfolding: mode `mode` indexes rows, remaining modes keep their order, earliest fastest."""
    t = np.asarray(t, dtype=np.float64)
    _check_mode(t, mode)
    return np.reshape(np.moveaxis(t, mode - 1, 0), (t.shape[mode - 1], -1), order="F")


def mode_refold(m: Matrix, shape: Sequence[int], mode: int) -> DenseTensor:
    """Inverse of :func:`mode_unfold`."""
    shape = tuple(int(s) for s in shape)
    if not 1 <= mode <= len(shape):
        raise DataError(f"Mode {mode} out of range for a {len(shape)}-way tensor")
    rest = shape[:mode - 1] + shape[mode:]
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (shape[mode - 1], int(np.prod(rest))):
        raise DataError(f"Matrix of shape {m.shape} cannot be refolded to {shape} along mode {mode}")
    return np.moveaxis(np.reshape(m, (shape[mode - 1],) + rest, order="F"), 0, mode - 1)


def _check_core(t: DenseTensor, name: str = "tensor") -> None:
    if np.ndim(t) != 3:
        raise DataError(f"{name} must have exactly 3 modes, got {np.ndim(t)}")


def left_unfold(t: DenseTensor) -> Matrix:
    """L(t): (r_prev*I) x r_next, row index alpha + r_prev*i."""
    _check_core(t)
    r_prev, size, r_next = t.shape
    return np.reshape(t, (r_prev * size, r_next), order="F")


def right_unfold(t: DenseTensor) -> Matrix:
    """R(t): r_prev x (I*r_next), column index i + I*beta."""
    _check_core(t)
    r_prev, size, r_next = t.shape
    return np.reshape(t, (r_prev, size * r_next), order="F")


def left_refold(m: Matrix, r_prev: int, size: int, r_next: int) -> DenseTensor:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (r_prev * size, r_next):
        raise DataError(
            f"Matrix of shape {m.shape} cannot be left-refolded to ({r_prev}, {size}, {r_next})"
        )
    return np.reshape(m, (r_prev, size, r_next), order="F")


def right_refold(m: Matrix, r_prev: int, size: int, r_next: int) -> DenseTensor:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (r_prev, size * r_next):
        raise DataError(
            f"Matrix of shape {m.shape} cannot be right-refolded to ({r_prev}, {size}, {r_next})"
        )
    return np.reshape(m, (r_prev, size, r_next), order="F")


def connect_product(u: DenseTensor, v: DenseTensor) -> DenseTensor:
    """
    Tensor connect product of two 3-way cores.

    The result has shape (r_u_prev, I_u*I_v, r_v_next) with the middle index
    i_u + I_u*i_v, so that L(uv) = (I_{I_v} kron L(u)) L(v).
    """
    _check_core(u, "left core")
    _check_core(v, "right core")
    if u.shape[2] != v.shape[0]:
        raise DataError(f"Rank mismatch in connect product: {u.shape} x {v.shape}")
    joined = np.einsum("aib,bjc->aijc", u, v)
    return np.reshape(joined, (u.shape[0], u.shape[1] * v.shape[1], v.shape[2]), order="F")


def connect_chain(cores: Sequence[DenseTensor]) -> DenseTensor | None:
    """Left-to-right connect product of `cores`; None for an empty chain."""
    result = None
    for core in cores:
        result = core if result is None else connect_product(result, core)
    return result


def reshape_t(m: Matrix, k: int, dims: Sequence[int], r_n: int) -> Matrix:
    """
    T_k: relabel a (I1...In) x r_n matrix as (I1...Ik) x (I_{k+1}...In * r_n).

    For k = n the shape is unchanged.
    """
    dims = tuple(int(s) for s in dims)
    if not 1 <= k <= len(dims):
        raise DataError(f"Reshape index {k} out of range for {len(dims)} modes")
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (int(np.prod(dims)), r_n):
        raise DataError(f"Matrix of shape {m.shape} does not match dims {dims} with r_n={r_n}")
    return np.reshape(m, (int(np.prod(dims[:k])), -1), order="F")
