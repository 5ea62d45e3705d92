"""Metric module for KoopWatch.
Scores detection reports against the ground-truth attack labels of a run.
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)


def _ratio(numerator, denominator):
    return float(numerator / denominator) if denominator else None


class _Counts:
    def __init__(self):
        self.tp = 0
        self.fp = 0
        self.fn = 0

    def add(self, flagged, truth):
        self.tp += len(flagged & truth)
        self.fp += len(flagged - truth)
        self.fn += len(truth - flagged)

    def summary(self):
        return {
            "precision": _ratio(self.tp, self.tp + self.fp),
            "recall": _ratio(self.tp, self.tp + self.fn),
            "true_positives": self.tp,
            "false_positives": self.fp,
            "false_negatives": self.fn,
        }


class MetricModule:
    """Accumulates per-step detection outcomes and summarizes a run.

    Latency is the first attack-verdict step at or after the first attacked
    sample minus that sample. Precision and recall count sensors over the
    reports inside attack windows, once over the whole window and once over the
    steady part from the first detection onward.
    """
    def __init__(self, labels, dt):
        """Initialize the scorer.
        Args:
            labels (np.ndarray): Boolean (samples, p) ground truth.
            dt (float): Sample interval in seconds.
        """
        self.labels = np.asarray(labels, dtype=bool)
        self.dt = dt
        attacked = np.flatnonzero(self.labels.any(axis=1))
        self.first_attacked = int(attacked[0]) if attacked.size else None
        self.first_detection = None
        self.reports = 0
        self.verdicts = 0
        self.nominal_steps = 0
        self.false_positive_steps = 0
        self.window = _Counts()
        self.steady = _Counts()
        self.per_sensor = {}
        logger.debug("Metric Module initialized (%d samples, first attacked sample %s)", self.labels.shape[0], self.first_attacked)

    def update(self, report):
        truth = frozenset(int(i) for i in np.flatnonzero(self.labels[report.step]))
        self.reports += 1
        if report.attack:
            self.verdicts += 1
        if not truth:
            self.nominal_steps += 1
            if report.attack:
                self.false_positive_steps += 1
            return
        if report.attack and self.first_detection is None and report.step >= self.first_attacked:
            self.first_detection = report.step
        self.window.add(report.flagged, truth)
        if self.first_detection is not None:
            self.steady.add(report.flagged, truth)
        for sensor in report.flagged | truth:
            self.per_sensor.setdefault(sensor, _Counts()).add(report.flagged & {sensor}, truth & {sensor})

    def summary(self):
        latency = None
        if self.first_detection is not None:
            latency = self.first_detection - self.first_attacked
        return {
            "reports": self.reports,
            "attack_verdicts": self.verdicts,
            "first_attacked_step": self.first_attacked,
            "first_detection_step": self.first_detection,
            "latency_samples": latency,
            "latency_seconds": None if latency is None else latency * self.dt,
            "false_positive_steps": self.false_positive_steps,
            "false_positive_step_rate": _ratio(self.false_positive_steps, self.nominal_steps),
            "attack_window": self.window.summary(),
            "steady_attack": self.steady.summary(),
            "per_sensor": {str(sensor): counts.summary() for sensor, counts in sorted(self.per_sensor.items())},
        }


def score_reports(reports, labels, dt):
    """Runs MetricModule over a report sequence and returns its summary."""
    metrics = MetricModule(labels, dt)
    for report in reports:
        metrics.update(report)
    return metrics.summary()
