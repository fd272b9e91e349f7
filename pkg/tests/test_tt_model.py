import struct

import numpy as np
import pytest

from services.tt_model import (
    TTSubspace,
    deserialize,
    dim_pca,
    dim_tpca_equal,
    dim_ttpca_equal,
    integer_root,
    manifold_dim_ttpca,
    serialize,
    storage_embedding,
    storage_pca,
    storage_tnpe,
    storage_tpca,
    storage_ttnpe,
    storage_ttpca,
)
from utils.errors import DataError, ModelFormatError, NumericError, UsageError


# ============================================================================
# CONSTRUCTION AND ORTHOGONALITY
# ============================================================================

def test_rejects_broken_chains(rng):
    with pytest.raises(DataError):
        TTSubspace([rng.standard_normal((2, 3, 2))])
    with pytest.raises(DataError):
        TTSubspace([rng.standard_normal((1, 3, 2)), rng.standard_normal((3, 3, 2))])
    with pytest.raises(DataError):
        TTSubspace([rng.standard_normal((1, 2, 3))])  # r1 > r0*I1


def test_orthonormal_flag_is_verified(rng):
    with pytest.raises(NumericError):
        TTSubspace([rng.standard_normal((1, 4, 2))], orthonormal=True)
    assert not TTSubspace([rng.standard_normal((1, 4, 2))]).orthonormal


def test_cores_are_immutable(random_subspace):
    s = random_subspace()
    with pytest.raises(ValueError):
        s.cores[0][0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        s.materialize_basis()[0, 0] = 1.0


def test_shape_bookkeeping(random_subspace):
    s = random_subspace((4, 4, 4), (2, 2, 3))
    assert s.dims == (4, 4, 4)
    assert s.ranks == (1, 2, 2, 3)
    assert s.ambient_dim == 64 and s.rank == 3 and s.n_modes == 3
    assert s.materialize_basis().shape == (64, 3)


def test_random_rejects_infeasible_ranks(rng):
    with pytest.raises(UsageError):
        TTSubspace.random((2, 2), (3, 1), rng)


def test_orthonormal_cores_give_orthonormal_basis(rng):
    for _ in range(100):
        n = int(rng.integers(1, 5))
        dims = tuple(int(s) for s in rng.integers(2, 5, size=n))
        ranks, r_prev = [], 1
        for size in dims:
            r_next = int(rng.integers(1, min(r_prev * size, 4) + 1))
            ranks.append(r_next)
            r_prev = r_next
        s = TTSubspace.random(dims, ranks, rng)
        basis = s.materialize_basis()
        assert np.max(np.abs(basis.T @ basis - np.eye(s.rank))) <= 1e-10


def test_project_reconstruct_and_residual(random_subspace, rng):
    s = random_subspace()
    coeffs = rng.standard_normal(3)
    x = s.reconstruct(coeffs)
    np.testing.assert_allclose(s.project(x), coeffs, atol=1e-12)
    assert s.residual_norm_sq(x) == pytest.approx(0.0, abs=1e-20)

    y = rng.standard_normal(64)
    basis = s.materialize_basis()
    expected = np.sum((y - basis @ (basis.T @ y)) ** 2)
    assert s.residual_norm_sq(y) == pytest.approx(expected, rel=1e-12)
    assert s.residual_norm_sq(y.reshape((4, 4, 4), order="F")) == pytest.approx(expected, rel=1e-12)


def test_projection_needs_orthonormal_cores(rng):
    s = TTSubspace([rng.standard_normal((1, 4, 2))])
    with pytest.raises(NumericError):
        s.project(np.ones(4))


def test_sample_shape_mismatch(random_subspace):
    with pytest.raises(DataError):
        random_subspace().project(np.ones(10))


SHAPES = [
    ((4, 4, 4), (2, 2, 3)),
    ((3, 5), (3, 4)),
    ((2, 3, 2, 2), (2, 3, 2, 1)),
    ((6,), (4,)),
]


@pytest.mark.parametrize("dims, ranks", SHAPES)
@pytest.mark.parametrize("c", [-3.0, 0.5, 1e3])
def test_residual_scales_quadratically(rng, dims, ranks, c):
    s = TTSubspace.random(dims, ranks, rng)
    x = rng.standard_normal(s.ambient_dim)
    assert s.residual_norm_sq(c * x) == pytest.approx(c * c * s.residual_norm_sq(x), rel=1e-10)


@pytest.mark.parametrize("dims, ranks", SHAPES)
def test_projection_splits_the_norm(rng, dims, ranks):
    s = TTSubspace.random(dims, ranks, rng)
    for x in rng.standard_normal((5, s.ambient_dim)):
        norm_sq = float(x @ x)
        kept = float(np.sum(s.project(x) ** 2))
        residual = s.residual_norm_sq(x)
        assert kept + residual == pytest.approx(norm_sq, rel=1e-10)
        assert residual <= norm_sq * (1 + 1e-12)


@pytest.mark.parametrize("dims, ranks", SHAPES)
def test_reconstruct_and_project_are_linear(rng, dims, ranks):
    s = TTSubspace.random(dims, ranks, rng)
    a, b = rng.standard_normal((2, s.rank))
    alpha, beta = rng.standard_normal(2)
    np.testing.assert_allclose(
        s.reconstruct(alpha * a + beta * b), alpha * s.reconstruct(a) + beta * s.reconstruct(b), atol=1e-12
    )
    x, y = rng.standard_normal((2, s.ambient_dim))
    np.testing.assert_allclose(s.project(alpha * x + beta * y), alpha * s.project(x) + beta * s.project(y), atol=1e-12)


# ============================================================================
# PERSISTENCE
# ============================================================================

def test_serialize_round_trip_is_bit_exact(random_subspace):
    s = random_subspace()
    blob = serialize(s)
    assert blob[:4] == b"TTSS"
    loaded = deserialize(blob)
    assert loaded.ranks == s.ranks and loaded.dims == s.dims and loaded.orthonormal
    for a, b in zip(loaded.cores, s.cores):
        np.testing.assert_array_equal(a, b)


def test_serialize_layout(random_subspace):
    s = random_subspace((4, 4, 4), (2, 2, 3))
    blob = serialize(s)
    magic, version, n = struct.unpack_from("<4sII", blob, 0)
    assert (magic, version, n) == (b"TTSS", 1, 3)
    assert struct.unpack_from("<4I", blob, 12) == (1, 2, 2, 3)
    assert struct.unpack_from("<3I", blob, 28) == (4, 4, 4)
    first = np.frombuffer(blob, dtype="<f8", count=8, offset=40)
    np.testing.assert_array_equal(first, np.ravel(s.cores[0], order="F"))
    assert blob[-1] == 1


def test_deserialize_errors(random_subspace):
    blob = serialize(random_subspace())
    with pytest.raises(ModelFormatError):
        deserialize(b"XXXX" + blob[4:])
    with pytest.raises(ModelFormatError):
        deserialize(blob[:-9])
    with pytest.raises(ModelFormatError):
        deserialize(blob + b"\x00")
    with pytest.raises(ModelFormatError):
        deserialize(blob[:4] + struct.pack("<I", 99) + blob[8:])


# ============================================================================
# STORAGE
# ============================================================================

def test_storage_regression_constants():
    d, n, r, n_train = 16, 2, 2, 10
    assert storage_embedding("KNN", d, n, r, n_train).total_storage == 160
    assert storage_embedding("TNPE", d, n, r, n_train).total_storage == 50
    ttnpe = storage_embedding("TT-NPE", d, n, r, n_train)
    assert ttnpe.total_storage == 38
    assert ttnpe.compression_ratio == pytest.approx(0.2375)
    assert dim_pca(d, r) == 29
    assert dim_ttpca_equal(d, n, r) == 18


@pytest.mark.parametrize("d, n, r", [(16, 2, 2), (64, 3, 2), (81, 4, 3), (49, 2, 5)])
def test_general_forms_agree_with_closed_forms(d, n, r):
    size = integer_root(d, n)
    dims, ranks = (size,) * n, (r,) * n
    assert storage_ttpca(dims, ranks).subspace_dim == dim_ttpca_equal(d, n, r)
    assert storage_tpca(dims, ranks, variant="main").subspace_dim == dim_tpca_equal(d, n, r)
    assert storage_tnpe(dims, r, 10).total_storage == storage_embedding("TNPE", d, n, r, 10).total_storage
    assert storage_ttnpe(dims, ranks, 10).total_storage == storage_embedding("TT-NPE", d, n, r, 10).total_storage


def test_tpca_variants_and_manifold_dimension():
    assert storage_tpca((4, 4), (2, 2), variant="appendix").subspace_dim == 12
    assert storage_tpca((4, 4), (2, 2), variant="main").subspace_dim == 18
    assert manifold_dim_ttpca((4, 4), (2, 2)) == 20
    with pytest.raises(UsageError):
        storage_tpca((4, 5), (2, 2), variant="main")


def test_coefficient_inclusive_storage():
    assert storage_pca(16, 2, 10, include_coefficients=True).total_storage == 29 + 20
    assert storage_ttpca((4, 4), (2, 2), 10, include_coefficients=True).total_storage == 18 + 20
    assert storage_tpca((4, 4), (2, 2), 10, include_coefficients=True).total_storage == 8 + 40


def test_storage_edge_cases():
    assert dim_ttpca_equal(16, 2, 0) == 0
    assert storage_ttpca((4, 4), (0, 0)).subspace_dim == 0
    with pytest.raises(UsageError):
        integer_root(15, 2)
    with pytest.raises(UsageError):
        storage_pca(0, 1)
    with pytest.raises(UsageError):
        storage_ttpca((4, 4), (2,))
