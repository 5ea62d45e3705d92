import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from core.cluster_module import (AffinityMatrix, NormalizedModeMatrix, build_affinity, canonical_labels,
                                 divergence_matrix, kl_divergence, normalize_magnitudes, normalize_modes,
                                 kmeans, spectral_cluster)
from core.errors import DimensionMismatch, NonPositiveEntry
from core.kmd_module import ModeSet

magnitudes = arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 6)),
                    elements=st.floats(0.0, 10.0, allow_nan=False))
positive_magnitudes = arrays(np.float64, (5, 4), elements=st.floats(0.1, 10.0, allow_nan=False))
probability_rows = arrays(np.float64, 5, elements=st.floats(0.01, 1.0, allow_nan=False)).map(lambda row: row / row.sum())


def block_affinity(sizes=(3, 7), cross=0.05):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    weights = np.where(labels[:, np.newaxis] == labels[np.newaxis, :], 1.0, cross)
    return AffinityMatrix(weights, 1.0, np.zeros_like(weights))


@settings(max_examples=200)
@given(magnitudes)
def test_normalized_rows_are_probabilities(values):
    rows = normalize_magnitudes(values, 1e-9)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(rows > 0)


@given(positive_magnitudes, arrays(np.float64, 4, elements=st.floats(0.1, 10.0)))
def test_column_rescaling_leaves_rows_unchanged(values, scales):
    np.testing.assert_allclose(normalize_magnitudes(values * scales, 0.0), normalize_magnitudes(values, 0.0), atol=1e-12)


def test_normalize_modes_uses_mode_magnitudes():
    modes = ModeSet(np.array([0.9, 0.5]), np.array([[1.0, -2.0], [3j, 2.0]]), 0.0)
    matrix = normalize_modes(modes, epsilon=0.0)
    np.testing.assert_allclose(matrix.rows[0], [1 / 3, 2 / 3])
    assert matrix.p == 2


def test_normalize_modes_needs_two_sensors():
    with pytest.raises(DimensionMismatch):
        normalize_modes(ModeSet(np.array([0.9]), np.array([[1.0]]), 0.0))


@given(probability_rows, probability_rows)
def test_kl_divergence_is_non_negative(p_row, q_row):
    assert kl_divergence(p_row, q_row) >= 0.0


def test_kl_divergence_of_identical_rows_is_zero():
    row = np.array([0.2, 0.3, 0.5])
    assert kl_divergence(row, row) == 0.0


def test_kl_divergence_rejects_zero_entries():
    with pytest.raises(NonPositiveEntry):
        kl_divergence([0.5, 0.5, 0.0], [0.2, 0.3, 0.5])


def test_kl_divergence_rejects_length_mismatch():
    with pytest.raises(DimensionMismatch):
        kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])


def test_divergence_matrix_matches_pairwise_kl():
    rng = np.random.default_rng(1)
    rows = rng.uniform(0.1, 1.0, (4, 3))
    rows /= rows.sum(axis=1, keepdims=True)
    divergences = divergence_matrix(rows)
    for i in range(4):
        for j in range(4):
            expected = 0.5 * (kl_divergence(rows[i], rows[j]) + kl_divergence(rows[j], rows[i])) if i != j else 0.0
            assert divergences[i, j] == pytest.approx(expected, abs=1e-12)
    np.testing.assert_array_equal(divergences, divergences.T)


def test_affinity_is_symmetric_with_unit_diagonal():
    rows = np.array([[0.5, 0.5], [0.6, 0.4], [0.9, 0.1], [0.1, 0.9]])
    affinity = build_affinity(NormalizedModeMatrix(rows, 1e-9))
    np.testing.assert_array_equal(affinity.weights, affinity.weights.T)
    np.testing.assert_array_equal(np.diag(affinity.weights), 1.0)
    assert np.all(affinity.weights > 0) and np.all(affinity.weights <= 1.0)


def test_identical_rows_fall_back_to_unit_bandwidth():
    affinity = build_affinity(NormalizedModeMatrix(np.full((4, 3), 1 / 3), 1e-9))
    assert affinity.sigma == 1.0
    np.testing.assert_allclose(affinity.weights, 1.0)


@pytest.mark.parametrize("seed", range(50))
def test_block_affinity_is_split_exactly(seed):
    assignment = spectral_cluster(block_affinity(), k=2, seed=seed)
    np.testing.assert_array_equal(assignment.labels, [0] * 3 + [1] * 7)


def test_two_sensors_are_split():
    rows = np.array([[0.9, 0.1], [0.1, 0.9]])
    assignment = spectral_cluster(build_affinity(NormalizedModeMatrix(rows, 1e-9)), k=2, seed=0)
    np.testing.assert_array_equal(assignment.labels, [0, 1])


def test_clustering_is_deterministic_for_a_seed():
    rng = np.random.default_rng(5)
    rows = rng.uniform(0.1, 1.0, (12, 4))
    rows /= rows.sum(axis=1, keepdims=True)
    affinity = build_affinity(NormalizedModeMatrix(rows, 1e-9))
    first = spectral_cluster(affinity, k=3, seed=11)
    second = spectral_cluster(affinity, k=3, seed=11)
    np.testing.assert_array_equal(first.labels, second.labels)
    assert first.inertia == second.inertia


def test_cluster_count_is_bounded_by_sensor_count():
    with pytest.raises(ValueError):
        spectral_cluster(block_affinity((1, 1)), k=3)
    with pytest.raises(ValueError):
        spectral_cluster(block_affinity(), k=1)


def test_canonical_labels_follow_first_appearance():
    labels, order = canonical_labels(np.array([1, 1, 0, 2]), 3)
    np.testing.assert_array_equal(labels, [0, 0, 1, 2])
    assert order == [1, 0, 2]


def test_members_lists_cluster_sensors():
    assignment = spectral_cluster(block_affinity((2, 3)), k=2, seed=0)
    np.testing.assert_array_equal(assignment.members(1), [2, 3, 4])


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(10))), st.integers(0, 2**16))
def test_relabeling_sensors_relabels_the_partition(perm, seed):
    perm = np.array(perm)
    base = block_affinity()
    weights = base.weights[np.ix_(perm, perm)]
    permuted = spectral_cluster(AffinityMatrix(weights, 1.0, np.zeros_like(weights)), k=2, seed=seed)
    groups = {frozenset(int(perm[i]) for i in np.flatnonzero(permuted.labels == label)) for label in (0, 1)}
    assert groups == {frozenset(range(3)), frozenset(range(3, 10))}


def test_identical_points_still_fill_every_cluster():
    labels, centroids, inertia, repaired = kmeans(np.ones((5, 2)), 2, seed=0)
    assert set(labels.tolist()) == {0, 1}
    assert inertia == 0.0
    assert repaired <= 1
    np.testing.assert_allclose(centroids, 1.0)
