"""Clustering module for KoopWatch.

Turns Koopman modes into per-sensor probability rows, compares sensors with
the Kullback-Leibler divergence and splits them with normalized-Laplacian
spectral clustering.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import rel_entr
from sklearn.cluster import KMeans, kmeans_plusplus
from sklearn.exceptions import ConvergenceWarning

from core.errors import DimensionMismatch, EmbeddingFailure, InvalidParameter, NonPositiveEntry, NumericalFailure

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-9
MEDIAN_ZERO_FLOOR = 1e-9
KMEANS_TOLERANCE = 1e-10
KMEANS_MAX_ITER = 300


@dataclass(frozen=True, eq=False)
class NormalizedModeMatrix:
    """p x n_modes row-stochastic matrix, one probability row per sensor."""
    rows: np.ndarray
    epsilon: float

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def p(self):
        return self.rows.shape[0]


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    """Symmetric p x p Gaussian-kernel affinities with unit diagonal.

    `divergences` keeps the symmetrized KL matrix the weights were built from.
    """
    weights: np.ndarray
    sigma: float
    divergences: np.ndarray

    @property
    def p(self):
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Canonical k-means labels over the spectral embedding."""
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    repaired: int = 0

    @property
    def k(self):
        return self.centroids.shape[0]

    def members(self, label):
        return np.flatnonzero(self.labels == label)


def normalize_modes(modes, epsilon=DEFAULT_EPSILON):
    """Spatio-temporal normalization of |v_j|.

    Stacks the mode magnitudes into a p x n_modes matrix, adds `epsilon` to every
    entry, scales each column to unit sum (equal weight per mode) and then each
    row to unit sum (equal weight per sensor).

    Args:
        modes (ModeSet): Modes of the error sequence.
        epsilon (float): Smoothing constant keeping every entry strictly positive.

    Returns:
        NormalizedModeMatrix: Row-stochastic matrix.
    """
    if modes.p < 2 or modes.n_modes < 1:
        raise DimensionMismatch(f"need p >= 2 and at least one mode, got {modes.p}x{modes.n_modes}")
    return NormalizedModeMatrix(normalize_magnitudes(np.abs(modes.modes), epsilon), epsilon)


def normalize_magnitudes(magnitudes, epsilon=DEFAULT_EPSILON):
    """Array kernel of normalize_modes on a non-negative p x n_modes matrix."""
    if not np.all(np.isfinite(magnitudes)):
        raise NumericalFailure("mode magnitudes contain non-finite values")
    smoothed = magnitudes + epsilon
    column_sums = smoothed.sum(axis=0)
    # Only reachable with epsilon == 0 and an all-zero column.
    column_sums[column_sums == 0.0] = 1.0
    smoothed = smoothed / column_sums
    row_sums = smoothed.sum(axis=1, keepdims=True)
    empty_rows = row_sums[:, 0] == 0.0
    if np.any(empty_rows):
        smoothed[empty_rows] = 1.0 / smoothed.shape[1]
        row_sums[empty_rows] = 1.0
    return smoothed / row_sums


def kl_divergence(p_row, q_row):
    """KL(P || Q) = sum_m P(m) ln(P(m) / Q(m)) in nats for strictly positive rows."""
    p_row = np.asarray(p_row, dtype=np.float64)
    q_row = np.asarray(q_row, dtype=np.float64)
    if p_row.shape != q_row.shape:
        raise DimensionMismatch(f"rows of lengths {p_row.shape} and {q_row.shape}")
    if np.any(p_row <= 0) or np.any(q_row <= 0):
        raise NonPositiveEntry("KL divergence needs strictly positive probabilities")
    return float(max(rel_entr(p_row, q_row).sum(), 0.0))


def divergence_matrix(rows):
    """Symmetrized KL divergences d_ij = (KL(i||j) + KL(j||i)) / 2 between all rows."""
    rows = np.asarray(rows, dtype=np.float64)
    if np.any(rows <= 0):
        raise NonPositiveEntry("mode rows must be strictly positive; increase epsilon")
    logs = np.log(rows)
    self_terms = np.sum(rows * logs, axis=1)
    cross = rows @ logs.T
    directed = self_terms[:, np.newaxis] - cross
    divergences = 0.5 * (directed + directed.T)
    np.fill_diagonal(divergences, 0.0)
    return np.maximum(divergences, 0.0)


def build_affinity(matrix):
    """Gaussian-kernel adjacency over symmetrized KL divergences.

    sigma is the median off-diagonal divergence, or 1 when that median is
    (numerically) zero; W_ij = exp(-d_ij^2 / (2 sigma^2)) and W_ii = 1.
    """
    if matrix.p < 2:
        raise DimensionMismatch(f"need at least 2 sensors, got {matrix.p}")
    divergences = divergence_matrix(matrix.rows)
    upper = divergences[np.triu_indices(matrix.p, k=1)]
    sigma = float(np.median(upper))
    if sigma <= MEDIAN_ZERO_FLOOR:
        sigma = 1.0
    weights = np.exp(-divergences ** 2 / (2.0 * sigma ** 2))
    weights = np.maximum(weights, np.finfo(np.float64).tiny)
    np.fill_diagonal(weights, 1.0)
    weights.flags.writeable = False
    divergences.flags.writeable = False
    return AffinityMatrix(weights, sigma, divergences)


def spectral_embedding(weights, k):
    """Row-normalized eigenvectors of the k largest eigenvalues of D^-1/2 W D^-1/2."""
    degree = weights.sum(axis=1)
    scale = 1.0 / np.sqrt(degree)
    laplacian = weights * scale[:, np.newaxis] * scale[np.newaxis, :]
    p = weights.shape[0]
    try:
        _, vectors = scipy.linalg.eigh(laplacian, subset_by_index=[p - k, p - 1])
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise EmbeddingFailure(f"eigen-solver failed on the {p}x{p} affinity: {e}") from e
    if not np.all(np.isfinite(vectors)):
        raise EmbeddingFailure("embedding has non-finite entries")
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return vectors / norms


def kmeans(points, k, seed):
    """Lloyd iterations from a seeded k-means++ start.

    Returns:
        tuple: (labels, centroids, inertia, repaired) where `repaired` counts
        clusters left empty by the fit and re-seeded at the point farthest
        from its centroid.
    """
    seeds, _ = kmeans_plusplus(points, k, random_state=seed)
    with warnings.catch_warnings():
        # Fewer distinct points than clusters; handled by the repair below.
        warnings.simplefilter("ignore", ConvergenceWarning)
        try:
            fitted = KMeans(n_clusters=k, init=seeds, n_init=1, max_iter=KMEANS_MAX_ITER, tol=KMEANS_TOLERANCE,
                            random_state=seed, algorithm="lloyd").fit(points)
        except ValueError as e:
            raise EmbeddingFailure(f"k-means failed on the {points.shape[0]}-point embedding: {e}") from e
    labels = fitted.labels_.astype(int)
    centroids = np.array(fitted.cluster_centers_)

    repaired = 0
    for j in range(k):
        if np.any(labels == j):
            continue
        squared = ((points - centroids[labels]) ** 2).sum(axis=1)
        donors = np.bincount(labels, minlength=k)[labels] > 1
        farthest = int(np.argmax(np.where(donors, squared, -1.0)))
        labels[farthest] = j
        centroids[j] = points[farthest]
        repaired += 1
        logger.debug("k-means cluster %d empty, re-seeded at point %d", j, farthest)

    inertia = float(((points - centroids[labels]) ** 2).sum())
    return labels, centroids, inertia, repaired


def canonical_labels(labels, k):
    """Relabels clusters by ascending smallest member index; unused labels go last."""
    order = []
    for label in labels:
        if label not in order:
            order.append(int(label))
    order.extend(j for j in range(k) if j not in order)
    mapping = np.empty(k, dtype=int)
    for new, old in enumerate(order):
        mapping[old] = new
    return mapping[labels], order


def spectral_cluster(affinity, k=2, seed=0):
    """Spectral clustering of sensors from their affinity matrix.

    Args:
        affinity (AffinityMatrix): Symmetric affinities with unit diagonal.
        k (int): Number of clusters, 2 <= k <= p.
        seed (int): Seed of the k-means++ generator.

    Returns:
        ClusterAssignment: Labels ordered so cluster 0 holds sensor 0.
    """
    p = affinity.p
    if not 2 <= k <= p:
        raise InvalidParameter(f"cluster count must lie in [2, {p}], got {k}")
    embedding = spectral_embedding(np.asarray(affinity.weights), k)
    labels, centroids, inertia, repaired = kmeans(embedding, k, seed)
    labels, order = canonical_labels(labels, k)
    return ClusterAssignment(labels, centroids[order], inertia, repaired)
