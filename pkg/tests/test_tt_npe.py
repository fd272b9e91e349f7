from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse

from models import TTNPEConfig
from services import tt_npe
from services.synthetic import tt_class_dataset
from services.tensor_ops import connect_chain, left_unfold, reshape_t, right_unfold
from services.tt_model import TTSubspace
from services.tt_pca import successive_svd
from utils.datasets import LabeledDataset
from utils.errors import DataError, ModelFormatError, NumericError, UsageError


# ============================================================================
# AFFINITY GRAPH
# ============================================================================

def test_affinity_line_example(line_dataset):
    s = tt_npe.build_affinity(line_dataset, k=1, epsilon=1.0).weights.toarray()
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 0] = np.exp(-1.0)
    expected[2, 1] = np.exp(-81.0)
    np.testing.assert_allclose(s, expected, rtol=1e-15)


def test_affinity_duplicates_have_unit_weight():
    data = np.array([[0.0, 0.0, 5.0]])
    s = tt_npe.build_affinity(data, k=1, epsilon=2.0).weights.toarray()
    assert s[0, 1] == 1.0 and s[1, 0] == 1.0


def test_affinity_structure(rng):
    data = rng.standard_normal((6, 30))
    affinity = tt_npe.build_affinity(data, k=4)
    s = affinity.weights
    assert scipy.sparse.issparse(s)
    dense = s.toarray()
    assert np.all(np.diag(dense) == 0)
    assert np.all(np.count_nonzero(dense, axis=1) == 4)
    assert np.all((dense[dense > 0] > 0) & (dense[dense > 0] <= 1))
    assert affinity.epsilon > 0


def test_affinity_caps_k_and_ties_to_smaller_index():
    data = np.array([[0.0, 1.0, 2.0]])
    s = tt_npe.build_affinity(data, k=5, epsilon=1.0).weights.toarray()
    assert np.count_nonzero(s, axis=1).tolist() == [2, 2, 2]
    s1 = tt_npe.build_affinity(data, k=1, epsilon=1.0).weights.toarray()
    assert s1[1, 0] > 0 and s1[1, 2] == 0


def test_affinity_auto_epsilon_falls_back_to_one():
    data = np.zeros((2, 4))
    affinity = tt_npe.build_affinity(data, k=2)
    assert affinity.epsilon == 1.0


def test_affinity_row_normalization(rng):
    s = tt_npe.build_affinity(rng.standard_normal((3, 10)), k=3, normalize=True).weights
    np.testing.assert_allclose(np.asarray(s.sum(axis=1)).ravel(), 1.0)


def test_affinity_errors(rng):
    with pytest.raises(DataError):
        tt_npe.build_affinity(np.zeros((2, 1)), k=1)
    with pytest.raises(UsageError):
        tt_npe.build_affinity(rng.standard_normal((2, 5)), k=1, epsilon=0.0)
    with pytest.raises(UsageError):
        tt_npe.build_affinity(rng.standard_normal((2, 5)), k=0)


# ============================================================================
# Z AND ITS EIGEN TARGET
# ============================================================================

def test_z_without_graph_is_gram(rng):
    data = rng.standard_normal((5, 8))
    z = tt_npe.build_z(data, scipy.sparse.csr_matrix((8, 8)))
    np.testing.assert_allclose(z, data @ data.T, atol=1e-12)


def test_z_vanishes_for_perfect_neighbors():
    data = np.array([[1.0, 1.0], [2.0, 2.0]])
    s = scipy.sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(tt_npe.build_z(data, s), 0.0, atol=1e-15)


def test_z_is_symmetric_psd_and_matches_embedding_cost(rng):
    data = rng.standard_normal((6, 20))
    affinity = tt_npe.build_affinity(data, k=3)
    z = tt_npe.build_z(data, affinity)
    assert np.max(np.abs(z - z.T)) <= 1e-12
    assert np.linalg.eigvalsh(z).min() >= -1e-9 * np.linalg.norm(z)

    e, _ = np.linalg.qr(rng.standard_normal((6, 2)))
    s = affinity.weights.toarray()
    projected = e.T @ data
    brute = sum(np.sum((projected[:, i] - projected @ s[i]) ** 2) for i in range(20))
    assert np.trace(e.T @ z @ e) == pytest.approx(brute, rel=1e-9)


def test_z_dimension_mismatch(rng):
    with pytest.raises(DataError):
        tt_npe.build_z(rng.standard_normal((3, 4)), scipy.sparse.csr_matrix((5, 5)))


def test_smallest_eigvecs_diagonal():
    z = np.diag([3.0, 1.0, 2.0])
    v, values = tt_npe.smallest_eigvecs(z, 1)
    np.testing.assert_allclose(v[:, 0], [0.0, 1.0, 0.0], atol=1e-15)
    assert values.sum() == pytest.approx(1.0)
    v2, values2 = tt_npe.smallest_eigvecs(z, 2)
    assert values2.sum() == pytest.approx(3.0)
    assert np.trace(v2.T @ z @ v2) == pytest.approx(3.0)


def test_smallest_eigvecs_against_full_spectrum(rng):
    m = rng.standard_normal((12, 12))
    z = m + m.T
    v, values = tt_npe.smallest_eigvecs(z, 4)
    full = np.linalg.eigvalsh(z)
    np.testing.assert_allclose(values, full[:4], atol=1e-10)
    assert np.max(np.abs(v.T @ v - np.eye(4))) <= 1e-10
    assert np.trace(v.T @ z @ v) == pytest.approx(full[:4].sum(), abs=1e-9)
    pivots = np.argmax(np.abs(v), axis=0)
    assert np.all(v[pivots, np.arange(4)] > 0)


def test_smallest_eigvecs_errors(rng):
    with pytest.raises(NumericError):
        tt_npe.smallest_eigvecs(rng.standard_normal((4, 4)), 2)
    with pytest.raises(UsageError):
        tt_npe.smallest_eigvecs(np.eye(3), 4)


def test_trace_lower_bound_over_tt_structured_bases(rng):
    m = rng.standard_normal((12, 12))
    z = m @ m.T
    v, values = tt_npe.smallest_eigvecs(z, 2)
    bound = np.trace(v.T @ z @ v)
    assert bound == pytest.approx(values.sum(), abs=1e-9)
    for _ in range(1000):
        u = TTSubspace.random((3, 4), (2, 2), rng).materialize_basis()
        assert bound <= np.trace(u.T @ z @ u) + 1e-9


# ============================================================================
# CORE UPDATES
# ============================================================================

def test_reshaping_identity(rng, random_cores):
    for _ in range(50):
        n = int(rng.integers(2, 5))
        dims = tuple(int(s) for s in rng.integers(2, 4, size=n))
        ranks = tuple(int(r) for r in rng.integers(1, 4, size=n))
        cores = random_cores(dims, ranks)
        full = left_unfold(connect_chain(cores))
        for k in range(1, n + 1):
            left = connect_chain(cores[:k - 1])
            right = connect_chain(cores[k:])
            left_matrix = left_unfold(left) if left is not None else np.ones((1, 1))
            right_matrix = right_unfold(right) if right is not None else np.eye(ranks[-1])
            rebuilt = np.kron(np.eye(dims[k - 1]), left_matrix) @ left_unfold(cores[k - 1]) @ right_matrix
            np.testing.assert_allclose(reshape_t(full, k, dims, ranks[-1]), rebuilt, atol=1e-12)


def test_core_problem_objective_is_relaxed_objective(rng):
    s = TTSubspace.random((3, 4, 2), (2, 3, 2), rng)
    target, _ = np.linalg.qr(rng.standard_normal((24, 2)))
    cores = list(s.cores)
    for k in (1, 2, 3):
        prob = tt_npe.core_problem(cores, k, target)
        assert prob.objective(left_unfold(cores[k - 1])) == pytest.approx(
            tt_npe.relaxed_objective(cores, target), rel=1e-12
        )


def test_check_ranks():
    tt_npe.check_ranks((4, 4), (2, 3))
    with pytest.raises(UsageError):
        tt_npe.check_ranks((4, 4), (5, 3))
    with pytest.raises(UsageError):
        tt_npe.check_ranks((2, 2), (2, 5))
    with pytest.raises(UsageError):
        tt_npe.check_ranks((4, 4), (2,))
    with pytest.raises(UsageError):
        tt_npe.check_ranks((4, 2), (4, 1))  # r1 > I2*rn


def test_representable_target_is_recovered(rng):
    truth = TTSubspace.random((3, 3, 3), (2, 2, 2), rng)
    target = truth.materialize_basis()
    start, _, _ = successive_svd(target, (3, 3, 3), ranks=(2, 2, 2), exact_ranks=True)
    cfg = TTNPEConfig(ranks=(2, 2, 2), max_sweeps=50)
    _, history, _ = tt_npe.fit_to_target(start, target, cfg)
    assert history[-1] <= 1e-8


def test_single_core_matches_target(rng):
    data = rng.standard_normal((6, 15))
    ds = LabeledDataset(data, np.zeros(15, dtype=np.int64), (6,))
    model = tt_npe.fit(ds, TTNPEConfig(ranks=(3,), k=4))
    affinity = tt_npe.build_affinity(data, 4)
    v, _ = tt_npe.smallest_eigvecs(tt_npe.build_z(data, affinity), 3)
    u = model.subspace.materialize_basis()
    np.testing.assert_allclose(np.abs(u.T @ v), np.eye(3), atol=1e-8)
    assert model.sweeps <= 2


def test_relaxed_objective_is_monotone():
    ds, _ = tt_class_dataset((4, 4, 4), (2, 3, 4), n_per_class=100, n_classes=2, seed=11, noise_sigma=0.1)
    model = tt_npe.fit(ds, TTNPEConfig(ranks=(2, 3, 4), k=5, max_sweeps=5))
    history = np.array(model.history)
    assert np.all(np.diff(history) <= 1e-9)
    u = model.subspace.materialize_basis()
    assert np.max(np.abs(u.T @ u - np.eye(4))) <= 1e-10
    np.testing.assert_allclose(model.embedded, u.T @ ds.data, atol=1e-10)
    assert model.lower_bound <= model.trace_value + 1e-9


def test_fit_errors(rng):
    ds = LabeledDataset(rng.standard_normal((16, 4)), np.zeros(4, dtype=np.int64), (4, 4))
    with pytest.raises(DataError):
        tt_npe.fit(ds, TTNPEConfig(ranks=(2, 2), k=5))
    with pytest.raises(UsageError):
        tt_npe.fit(ds, TTNPEConfig(ranks=(5, 2), k=2))


# ============================================================================
# EMBEDDING AND KNN
# ============================================================================

@pytest.fixture
def fitted_model():
    ds, _ = tt_class_dataset((3, 4), (3, 4), n_per_class=20, n_classes=2, seed=2, noise_sigma=0.05)
    return ds, tt_npe.fit(ds, TTNPEConfig(ranks=(3, 4), k=3, max_sweeps=3))


def test_embed_training_sample_and_linearity(fitted_model, rng):
    ds, model = fitted_model
    np.testing.assert_allclose(tt_npe.embed(model, ds.sample(3)), model.embedded[:, 3], atol=1e-10)
    np.testing.assert_allclose(tt_npe.embed(model, np.zeros((3, 4))), 0.0)
    a, b = rng.standard_normal(12), rng.standard_normal(12)
    np.testing.assert_allclose(
        tt_npe.embed(model, 2 * a - b), 2 * tt_npe.embed(model, a) - tt_npe.embed(model, b), atol=1e-12
    )
    with pytest.raises(DataError):
        tt_npe.embed(model, np.ones(5))


def test_training_point_classifies_as_itself(fitted_model):
    ds, model = fitted_model
    assert tt_npe.classify_knn(model, ds.sample(7), 1) == ds.labels[7]
    assert tt_npe.knn_baseline(ds, ds.sample(7), 1) == ds.labels[7]


def test_knn_line_example(line_dataset):
    assert tt_npe.knn_baseline(line_dataset, np.array([9.0]), 1) == 1


def test_knn_vote_ties_go_to_smallest_label():
    train = np.array([[0.0, 2.0]])
    labels = np.array([1, 0])
    assert tt_npe.predict_knn(train, labels, np.array([1.0]), 2).tolist() == [0]
    # distance tie with K=1: smaller training index wins
    assert tt_npe.predict_knn(train, labels, np.array([1.0]), 1).tolist() == [1]


def test_knn_errors():
    with pytest.raises(UsageError):
        tt_npe.predict_knn(np.zeros((2, 3)), np.zeros(3, dtype=np.int64), np.zeros(2), 4)
    with pytest.raises(DataError):
        tt_npe.predict_knn(np.zeros((2, 3)), np.zeros(3, dtype=np.int64), np.zeros(3), 1)


def test_full_rank_embedding_matches_raw_knn(rng):
    ds, _ = tt_class_dataset((2, 3), (2, 6), n_per_class=30, n_classes=2, seed=4, noise_sigma=0.3)
    model = tt_npe.fit(ds, TTNPEConfig(ranks=(2, 6), k=5, max_sweeps=2))
    u = model.subspace.materialize_basis()
    assert u.shape == (6, 6)
    queries = rng.standard_normal((6, 200))
    for j in range(200):
        assert tt_npe.classify_knn(model, queries[:, j], 5) == tt_npe.knn_baseline(ds, queries[:, j], 5)


def test_npe_model_round_trip(fitted_model, tmp_path):
    _, model = fitted_model
    model = replace(model, class_values=(2, 7))
    path = tmp_path / "model.ttne"
    tt_npe.save_npe_model(model, path)
    loaded = tt_npe.load_npe_model(path)
    assert loaded.label_values.tolist() == [2, 7]
    np.testing.assert_array_equal(loaded.embedded, model.embedded)
    np.testing.assert_array_equal(loaded.labels, model.labels)
    assert loaded.objective == model.objective
    np.testing.assert_array_equal(loaded.subspace.materialize_basis(), model.subspace.materialize_basis())

    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    with pytest.raises(ModelFormatError):
        tt_npe.load_npe_model(path)


def test_label_values_default_to_dense_indices(fitted_model):
    _, model = fitted_model
    assert model.label_values.tolist() == [0, 1]


def test_npe_model_rejects_unsorted_label_values(fitted_model, tmp_path):
    _, model = fitted_model
    path = tmp_path / "model.ttne"
    tt_npe.save_npe_model(replace(model, class_values=(7, 2)), path)
    with pytest.raises(ModelFormatError, match="strictly increasing"):
        tt_npe.load_npe_model(path)
