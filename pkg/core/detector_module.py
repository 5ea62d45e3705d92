"""Online attack identification loop for KoopWatch.

Each step splits the n + 1 most recent frames into a learning window and a
prediction window, predicts the prediction window with the empirical Koopman
operator, decomposes the prediction error into Koopman modes and clusters the
sensors by their normalized mode signatures.
"""

import dataclasses
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from core.cluster_module import build_affinity, normalize_modes, spectral_cluster
from core.errors import DimensionMismatch, InsufficientHistory, InvalidParameter
from core.kmd_module import (DEFAULT_RCOND, MeasurementFrame, StreamWindow, decompose_modes,
                             estimate_koopman, predict)
from core.state_module import StateModule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowConfig:
    """Window sizes (in samples) and decision parameters of the detector."""
    n: int = 120
    n_tilde: int = 12
    rcond: float = DEFAULT_RCOND
    epsilon: float = 1e-9
    k: int = 2
    tau: float = 3.0
    min_flag_persistence: int = 2
    strict: bool = False

    def __post_init__(self):
        problems = self.problems()
        if problems:
            field_name, message = problems[0]
            raise InvalidParameter(f"{field_name}: {message}")

    def problems(self):
        """List of (field, message) pairs for violated constraints."""
        problems = []
        if not 2 <= self.n_tilde < self.n:
            problems.append(("n_tilde", f"must satisfy 2 <= n_tilde < n, got n_tilde={self.n_tilde}, n={self.n}"))
        elif self.n - self.n_tilde < 3:
            problems.append(("n", f"learning window n - n_tilde must be at least 3, got {self.n - self.n_tilde}"))
        if not 0.0 < self.rcond < 1.0:
            problems.append(("rcond", f"must lie in (0, 1), got {self.rcond}"))
        if self.epsilon <= 0.0:
            problems.append(("epsilon", f"must be positive, got {self.epsilon}"))
        if self.k < 2:
            problems.append(("k", f"must be at least 2, got {self.k}"))
        if self.tau <= 1.0:
            problems.append(("tau", f"must exceed 1, got {self.tau}"))
        if self.min_flag_persistence < 1:
            problems.append(("min_flag_persistence", f"must be at least 1, got {self.min_flag_persistence}"))
        return problems

    @property
    def learning_length(self):
        return self.n - self.n_tilde


@dataclass(frozen=True, eq=False)
class DetectionReport:
    """Result of one detection step.

    `flagged` is empty iff `attack` is false. `candidates` and `raw_attack` are
    the un-debounced verdict; `mode_spread` is the normalized mode matrix.
    """
    t: float
    labels: tuple
    separation: float
    attack: bool
    flagged: frozenset
    modes_residual: float
    mode_spread: np.ndarray = field(repr=False)
    candidates: frozenset = frozenset()
    raw_attack: bool = False
    step: int = -1

    def to_record(self):
        return {
            "step": self.step,
            "t": self.t,
            "attack": self.attack,
            "raw_attack": self.raw_attack,
            "separation": self.separation,
            "flagged": sorted(self.flagged),
            "candidates": sorted(self.candidates),
            "labels": list(self.labels),
            "modes_residual": self.modes_residual,
            "mode_spread": self.mode_spread.tolist(),
        }

    @classmethod
    def from_record(cls, record):
        return cls(
            t=record["t"],
            labels=tuple(record["labels"]),
            separation=record["separation"],
            attack=record["attack"],
            flagged=frozenset(record["flagged"]),
            modes_residual=record["modes_residual"],
            mode_spread=np.array(record["mode_spread"], dtype=np.float64),
            candidates=frozenset(record["candidates"]),
            raw_attack=record["raw_attack"],
            step=record["step"],
        )


def compute_error_sequence(received, predicted):
    """Prediction error g(x_l) - g_hat(x_l) over the prediction window.

    Args:
        received (StreamWindow): Observed frames of the prediction window.
        predicted (list[MeasurementFrame]): Predicted frames, same length and dimension.

    Returns:
        StreamWindow: Error frames stamped with the received times.
    """
    if len(received) != len(predicted):
        raise DimensionMismatch(f"{len(received)} received frames vs {len(predicted)} predicted")
    errors = []
    for observed, guess in zip(received.frames, predicted):
        if observed.dim != guess.dim:
            raise DimensionMismatch(f"received frame has {observed.dim} values, prediction has {guess.dim}")
        errors.append(MeasurementFrame(observed.t, observed.values - guess.values))
    return StreamWindow(tuple(errors), received.dt)


def detect_step(history, cfg, seed=0, classifier=None):
    """One pass of the identification algorithm on the n + 1 latest frames.

    Args:
        history (StreamWindow): Exactly cfg.n + 1 equispaced frames, oldest first.
        cfg (WindowConfig): Window sizes and thresholds.
        seed (int): Seed of the k-means++ draws.
        classifier (StateModule, optional): Verdict rule; built from cfg.tau when omitted.

    Returns:
        DetectionReport: Un-debounced report (flagged == candidates).
    """
    if len(history) != cfg.n + 1:
        raise InsufficientHistory(f"detection needs exactly {cfg.n + 1} frames, got {len(history)}")

    learning = history.slice(0, cfg.learning_length)
    prediction = history.slice(cfg.learning_length)

    estimate = estimate_koopman(learning, cfg.rcond, cfg.strict)
    predicted = predict(estimate, learning.last(), cfg.n_tilde + 1)
    errors = compute_error_sequence(prediction, predicted)

    modes = decompose_modes(errors, cfg.rcond, cfg.strict)
    spread = normalize_modes(modes, cfg.epsilon)
    affinity = build_affinity(spread)
    assignment = spectral_cluster(affinity, cfg.k, seed)
    if classifier is None:
        classifier = StateModule(cfg.tau)
    verdict = classifier.classify(spread.rows, affinity.divergences, assignment.labels)

    logger.debug("t=%.4f separation=%.4g attack=%s candidates=%s", history.last().t, verdict.separation, verdict.attack, sorted(verdict.candidates))
    return DetectionReport(
        t=history.last().t,
        labels=tuple(int(label) for label in assignment.labels),
        separation=verdict.separation,
        attack=verdict.attack,
        flagged=verdict.candidates,
        modes_residual=modes.residual,
        mode_spread=np.array(spread.rows),
        candidates=verdict.candidates,
        raw_attack=verdict.attack,
    )


class DetectorStream:
    """Stateful streaming detector: ring buffer of n + 1 frames plus per-sensor persistence counters."""
    def __init__(self, cfg, seed=0, dt=None):
        """Initialize the stream.
        Args:
            cfg (WindowConfig): Detector configuration.
            seed (int): k-means++ seed used at every step.
            dt (float, optional): Sample interval; inferred from the first two frames when omitted.
        """
        self.cfg = cfg
        self.seed = seed
        self.dt = dt
        self.buffer = deque(maxlen=cfg.n + 1)
        self.classifier = StateModule(cfg.tau)
        self.counters = None
        self.frames_seen = 0
        logger.info("Detector stream initialized (n=%d, n_tilde=%d, tau=%s, persistence=%d)",
                    cfg.n, cfg.n_tilde, cfg.tau, cfg.min_flag_persistence)

    def push(self, frame):
        """Adds a frame; returns a DetectionReport once the buffer is full, else None."""
        if self.counters is None:
            self.counters = np.zeros(frame.dim, dtype=int)
        elif frame.dim != self.counters.shape[0]:
            raise DimensionMismatch(f"frame {self.frames_seen} has {frame.dim} values, stream has {self.counters.shape[0]}")
        if self.dt is None and self.buffer:
            self.dt = frame.t - self.buffer[-1].t

        self.buffer.append(frame)
        self.frames_seen += 1
        if len(self.buffer) <= self.cfg.n:
            return None

        raw = detect_step(StreamWindow(tuple(self.buffer), self.dt), self.cfg, self.seed, self.classifier)
        hits = np.zeros_like(self.counters, dtype=bool)
        hits[list(raw.candidates)] = True
        self.counters = np.where(hits, self.counters + 1, 0)
        flagged = frozenset(int(i) for i in np.flatnonzero(self.counters >= self.cfg.min_flag_persistence))
        if flagged:
            logger.info("Attack at t=%.3f on sensors %s (separation %.3g)", raw.t, sorted(flagged), raw.separation)
        return dataclasses.replace(raw, flagged=flagged, attack=bool(flagged), step=self.frames_seen - 1)


def detect_stream(source, cfg, seed=0, dt=None):
    """Runs the detector over a frame iterator, yielding one report per frame after warm-up."""
    stream = DetectorStream(cfg, seed, dt)
    for frame in source:
        report = stream.push(frame)
        if report is not None:
            yield report
