"""State classification module for KoopWatch.
Decides from a sensor clustering whether an attack is present and which cluster is attacked.
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.errors import InvalidParameter

logger = logging.getLogger(__name__)

INTRA_FLOOR = 1e-12


@dataclass(frozen=True)
class Verdict:
    """Outcome of one classification: ratio, decision and the attacked-cluster members."""
    separation: float
    attack: bool
    attacked_label: int
    candidates: frozenset


def separation_ratio(divergences, labels):
    """Mean symmetrized KL between clusters over the mean within clusters (floored at 1e-12).

    Returns 0 when every sensor sits in one cluster.
    """
    labels = np.asarray(labels)
    upper_i, upper_j = np.triu_indices(labels.shape[0], k=1)
    pair_divergences = divergences[upper_i, upper_j]
    same = labels[upper_i] == labels[upper_j]
    if not np.any(~same):
        return 0.0
    inter = pair_divergences[~same].mean()
    intra = pair_divergences[same].mean() if np.any(same) else 0.0
    return float(inter / max(intra, INTRA_FLOOR))


def _symmetric_kl_to(rows, reference):
    forward = np.sum(rows * np.log(rows / reference), axis=1)
    backward = np.sum(reference * np.log(reference / rows), axis=1)
    return 0.5 * (forward + backward)


def attacked_cluster(rows, labels):
    """Picks the minority cluster; ties go to the larger mean divergence from the average row."""
    labels = np.asarray(labels)
    used, sizes = np.unique(labels, return_counts=True)
    smallest = used[sizes == sizes.min()]
    if smallest.shape[0] == 1:
        return int(smallest[0])
    spread = _symmetric_kl_to(rows, rows.mean(axis=0))
    scores = [spread[labels == label].mean() for label in smallest]
    return int(smallest[int(np.argmax(scores))])


class StateModule:
    """Classifies a clustering as attacked or nominal using the separation-ratio test."""
    def __init__(self, tau=3.0):
        """Initialize the classifier.
        Args:
            tau (float): Separation ratio at or above which an attack is declared (> 1).
        """
        if tau <= 1.0:
            raise InvalidParameter(f"tau must exceed 1, got {tau}")
        self.tau = tau
        logger.debug("State Module initialized with tau=%s", tau)

    def classify(self, rows, divergences, labels):
        """Classifies one detection step.

        Args:
            rows (np.ndarray): p x n_modes normalized mode matrix.
            divergences (np.ndarray): p x p symmetrized KL divergences between rows.
            labels (np.ndarray): Cluster label per sensor.

        Returns:
            Verdict: Separation ratio, attack decision and flagged sensors (empty without attack).
        """
        separation = separation_ratio(divergences, labels)
        label = attacked_cluster(rows, labels)
        attack = separation >= self.tau
        candidates = frozenset(int(i) for i in np.flatnonzero(np.asarray(labels) == label)) if attack else frozenset()
        return Verdict(separation, attack, label, candidates)


if __name__ == "__main__":
    print("Testing State Module...")
    rows = np.array([[0.5, 0.5]] * 6 + [[0.99, 0.01]] * 2)
    from core.cluster_module import divergence_matrix
    labels = np.array([0] * 6 + [1] * 2)
    verdict = StateModule(tau=3.0).classify(rows, divergence_matrix(rows), labels)
    print(f"Separation {verdict.separation:.3g}, attack={verdict.attack}, flagged={sorted(verdict.candidates)}")
