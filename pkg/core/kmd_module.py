"""Koopman mode decomposition module for KoopWatch.

Estimates the empirical Koopman operator K = K1 K2^+ from a window of
snapshots, rolls it forward to predict future frames, and decomposes a
window into eigenvalues and Koopman modes.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from core.errors import (DegenerateWindow, DimensionMismatch, InsufficientHistory, InvalidParameter,
                         IrregularSampling, NumericalFailure)

logger = logging.getLogger(__name__)

DEFAULT_RCOND = 1e-10
EQUISPACING_TOLERANCE = 1e-9
# Frames whose norm is below this absolute level are roundoff and count as zero.
NOISE_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class MeasurementFrame:
    """One time-stamped vector of sensor readings."""
    t: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise DimensionMismatch(f"frame values must be a vector, got shape {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t", float(self.t))

    @property
    def dim(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class StreamWindow:
    """A contiguous, equispaced run of frames with a fixed dimension p >= 2."""
    frames: tuple
    dt: float

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "dt", float(self.dt))
        if len(frames) < 2:
            raise InsufficientHistory(f"a window needs at least 2 frames, got {len(frames)}")
        if self.dt <= 0:
            raise IrregularSampling(f"sample interval must be positive, got {self.dt}")
        p = frames[0].dim
        if p < 2:
            raise DimensionMismatch(f"streams need at least 2 sensors, got {p}")
        for index, frame in enumerate(frames):
            if frame.dim != p:
                raise DimensionMismatch(f"frame {index} has {frame.dim} values, expected {p}")
        times = np.array([frame.t for frame in frames])
        gaps = np.abs(np.diff(times) - self.dt)
        if np.any(gaps > EQUISPACING_TOLERANCE):
            worst = int(np.argmax(gaps))
            raise IrregularSampling(f"frames are not equispaced at dt={self.dt}: gap after frame {worst} is {times[worst + 1] - times[worst]}")

    @classmethod
    def from_array(cls, values, dt, t0=0.0):
        """Builds a window from a (length, p) array sampled every `dt` seconds from `t0`."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatch(f"expected a (length, p) array, got shape {values.shape}")
        frames = tuple(MeasurementFrame(t0 + k * dt, row) for k, row in enumerate(values))
        return cls(frames, dt)

    def __len__(self):
        return len(self.frames)

    @property
    def p(self):
        return self.frames[0].dim

    @property
    def times(self):
        return np.array([frame.t for frame in self.frames])

    @cached_property
    def snapshots(self):
        """(length, p) read-only array, one row per frame."""
        data = np.vstack([frame.values for frame in self.frames])
        data.flags.writeable = False
        return data

    def first(self):
        return self.frames[0]

    def last(self):
        return self.frames[-1]

    def slice(self, start, stop=None):
        return StreamWindow(self.frames[start:stop], self.dt)


@dataclass(frozen=True, eq=False)
class KoopmanEstimate:
    """Empirical p x p Koopman operator with its pseudo-inverse diagnostics."""
    operator: np.ndarray
    rank: int
    rcond_cutoff: float
    dt: float = 1.0

    def __post_init__(self):
        operator = np.array(self.operator, dtype=np.float64)
        if operator.ndim != 2 or operator.shape[0] != operator.shape[1]:
            raise DimensionMismatch(f"operator must be square, got shape {operator.shape}")
        if not np.all(np.isfinite(operator)):
            raise DegenerateWindow("operator has non-finite entries")
        if not 0 <= self.rank <= operator.shape[0]:
            raise InvalidParameter(f"rank {self.rank} outside [0, {operator.shape[0]}]")
        operator.flags.writeable = False
        object.__setattr__(self, "operator", operator)

    @property
    def dim(self):
        return self.operator.shape[0]


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Eigenvalues and Koopman modes of a window.

    `modes` is a (p, n_modes) complex matrix whose column j is the mode v_j.
    Frames are reconstructed as g[anchor + k] ~ sum_j eigenvalues[j]**k * modes[:, j].
    """
    eigenvalues: np.ndarray
    modes: np.ndarray
    residual: float
    dt: float = 1.0
    anchor: int = 0

    def __post_init__(self):
        eigenvalues = np.array(self.eigenvalues, dtype=np.complex128)
        modes = np.array(self.modes, dtype=np.complex128)
        if modes.ndim != 2 or eigenvalues.shape != (modes.shape[1],):
            raise DimensionMismatch(f"{eigenvalues.shape[0]} eigenvalues for modes of shape {modes.shape}")
        eigenvalues.flags.writeable = False
        modes.flags.writeable = False
        object.__setattr__(self, "eigenvalues", eigenvalues)
        object.__setattr__(self, "modes", modes)

    @property
    def p(self):
        return self.modes.shape[0]

    @property
    def n_modes(self):
        return self.modes.shape[1]

    def growth_rates(self):
        """Continuous-time growth rate ln|lambda| / dt per mode (1/s); -inf for zero eigenvalues."""
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.eigenvalues)) / self.dt

    def frequencies(self):
        """Oscillation frequency arg(lambda) / (2 pi dt) per mode, in Hz."""
        return np.angle(self.eigenvalues) / (2.0 * np.pi * self.dt)

    def reconstruct(self, length):
        """Real part of the modal expansion for `length` frames starting at the anchor."""
        powers = self.eigenvalues[np.newaxis, :] ** np.arange(length)[:, np.newaxis]
        return (powers @ self.modes.T).real


def _check_rcond(rcond):
    if not 0.0 < rcond < 1.0:
        raise InvalidParameter(f"rcond must lie in (0, 1), got {rcond}")


def fit_operator(snapshots, rcond=DEFAULT_RCOND, strict=False, floor=NOISE_FLOOR):
    """Array kernel of estimate_koopman: returns (operator, rank, cutoff) for (length, p) snapshots.

    Frames with norm below `floor` are zeroed and the rest are scaled by their
    largest entry before K1 and K2 are formed, so the retained rank depends
    only on the shape of the data. Directions whose amplitude stays below
    `floor` are cut from the pseudo-inverse as well.
    """
    snapshots = np.array(snapshots, dtype=np.float64)
    if not np.all(np.isfinite(snapshots)):
        raise DegenerateWindow("window contains non-finite values")
    p = snapshots.shape[1]
    snapshots[np.linalg.norm(snapshots, axis=1) < floor] = 0.0
    peak = np.abs(snapshots).max()
    if peak == 0.0:
        if strict:
            raise DegenerateWindow("all frames in the window are zero")
        return np.zeros((p, p)), 0, 0.0

    scaled = snapshots / peak
    previous = scaled[:-1]
    following = scaled[1:]
    n = previous.shape[0]

    k1 = following.T @ previous / n
    k2 = previous.T @ previous / n
    try:
        u, s, vh = scipy.linalg.svd(k2)
    except scipy.linalg.LinAlgError:
        try:
            u, s, vh = scipy.linalg.svd(k2, lapack_driver="gesvd")
        except scipy.linalg.LinAlgError as e:
            raise NumericalFailure(f"SVD of the {p}x{p} covariance did not converge: {e}") from e

    if s[0] == 0.0:
        if strict:
            raise DegenerateWindow("only the last frame of the window is non-zero")
        return np.zeros((p, p)), 0, 0.0

    cutoff = max(rcond * s[0], (floor / peak) ** 2)
    keep = s > cutoff
    k2_pinv = (vh[keep].T / s[keep]) @ u[:, keep].T
    return k1 @ k2_pinv, int(np.count_nonzero(keep)), float(cutoff * peak ** 2)


def estimate_koopman(window, rcond=DEFAULT_RCOND, strict=False):
    """Estimates the empirical Koopman operator K = K1 K2^+ on a window.

    Args:
        window (StreamWindow): n + 1 >= 3 equispaced frames.
        rcond (float): Relative singular-value cutoff for the pseudo-inverse of K2.
        strict (bool): Raise DegenerateWindow on an all-zero window instead of
            returning the zero operator.

    Returns:
        KoopmanEstimate: The operator, the retained rank of K2 and the cutoff used.
    """
    if len(window) < 3:
        raise InsufficientHistory(f"operator estimation needs at least 3 frames, got {len(window)}")
    _check_rcond(rcond)
    operator, rank, cutoff = fit_operator(window.snapshots, rcond, strict)
    logger.debug("Estimated %dx%d operator with rank %d on %d frames", operator.shape[0], operator.shape[1], rank, len(window))
    return KoopmanEstimate(operator, rank, cutoff, window.dt)


def rollout(operator, start, m):
    """Array kernel of predict: (m, p) array of K^i start for i = 1..m by repeated products."""
    predictions = np.empty((m, start.shape[0]))
    state = start
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(m):
            state = operator @ state
            predictions[i] = state
    if not np.all(np.isfinite(predictions)):
        first = int(np.argmax(~np.all(np.isfinite(predictions), axis=1)))
        raise NumericalFailure(f"open-loop prediction overflowed at step {first + 1} of {m}")
    return predictions


def predict(estimate, anchor, m):
    """Predicts the m frames following `anchor` with the estimated operator.

    Args:
        estimate (KoopmanEstimate): Operator fitted on a learning window.
        anchor (MeasurementFrame): Last observed frame g(x_n).
        m (int): Number of steps to predict, m >= 1.

    Returns:
        list[MeasurementFrame]: Frames at anchor.t + i * dt holding K^i g(x_n), i = 1..m.
    """
    if anchor.dim != estimate.dim:
        raise DimensionMismatch(f"anchor has {anchor.dim} values, operator is {estimate.dim}x{estimate.dim}")
    if m < 1:
        raise InvalidParameter(f"prediction horizon must be at least 1, got {m}")
    predictions = rollout(estimate.operator, anchor.values, m)
    return [MeasurementFrame(anchor.t + (i + 1) * estimate.dt, row) for i, row in enumerate(predictions)]


def _conjugate_pairs(eigenvalues):
    """Maps index -> partner index for eigenvalues returned as exact conjugate pairs."""
    partners = {}
    j = 0
    while j < len(eigenvalues) - 1:
        if eigenvalues[j].imag > 0 and eigenvalues[j + 1] == np.conj(eigenvalues[j]):
            partners[j] = j + 1
            partners[j + 1] = j
            j += 2
        else:
            j += 1
    return partners


def decompose_snapshots(snapshots, rcond=DEFAULT_RCOND, strict=False, dt=1.0):
    """Array kernel of decompose_modes for a (n_modes + 1, p) snapshot array."""
    snapshots = np.array(snapshots, dtype=np.float64)
    if not np.all(np.isfinite(snapshots)):
        raise NumericalFailure("window contains non-finite values")
    length, p = snapshots.shape
    n_modes = length - 1
    norms = np.linalg.norm(snapshots, axis=1)
    snapshots[norms < NOISE_FLOOR] = 0.0
    norms[norms < NOISE_FLOOR] = 0.0
    peak = norms.max()

    if peak == 0.0:
        if strict:
            raise DegenerateWindow("all frames in the window are zero")
        return ModeSet(np.zeros(n_modes), np.zeros((p, n_modes)), 0.0, dt, 0)

    # First frame with energy; leading all-zero frames would force zero amplitudes.
    anchor = int(np.argmax(norms > rcond * peak))

    scaled = snapshots / peak
    operator, _, _ = fit_operator(scaled, rcond, floor=NOISE_FLOOR / peak)
    try:
        eigenvalues, eigenvectors = scipy.linalg.eig(operator)
        amplitudes, *_ = scipy.linalg.lstsq(eigenvectors, scaled[anchor].astype(np.complex128), cond=rcond)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise NumericalFailure(f"eigendecomposition of the {p}x{p} window operator failed: {e}") from e
    amplitudes = amplitudes * peak

    partners = _conjugate_pairs(eigenvalues)
    for j in range(p):
        if j in partners:
            if j < partners[j]:
                amplitudes[partners[j]] = np.conj(amplitudes[j])
        elif eigenvalues[j].imag == 0.0:
            amplitudes[j] = amplitudes[j].real

    modes = eigenvectors * amplitudes[np.newaxis, :]
    energy = np.linalg.norm(modes, axis=0)
    order = np.lexsort((-np.angle(eigenvalues), -np.abs(eigenvalues), -energy))
    kept = list(order[:min(p, n_modes)])
    kept_set = set(kept)
    kept = [j for j in kept if j not in partners or partners[j] in kept_set]

    kept_eigenvalues = np.zeros(n_modes, dtype=np.complex128)
    kept_modes = np.zeros((p, n_modes), dtype=np.complex128)
    kept_eigenvalues[:len(kept)] = eigenvalues[kept]
    kept_modes[:, :len(kept)] = modes[:, kept]

    powers = kept_eigenvalues[np.newaxis, :] ** np.arange(length - anchor)[:, np.newaxis]
    reconstruction = np.zeros((length, p), dtype=np.complex128)
    reconstruction[anchor:] = powers @ kept_modes.T
    residual = float(np.linalg.norm(snapshots - reconstruction, axis=1).max() / peak)

    return ModeSet(kept_eigenvalues, kept_modes, residual, dt, anchor)


def decompose_modes(window, rcond=DEFAULT_RCOND, strict=False):
    """Koopman mode decomposition of a window of n_modes + 1 >= 3 frames.

    Fits a local one-step operator on the window, eigendecomposes it and scales
    each eigenvector by its amplitude at the anchor frame. Modes are ordered by
    descending energy |v_j|, then |lambda_j|, then phase; at most min(p, n_modes)
    are kept and the rest are zero-padded so the mode matrix is always p x n_modes.
    """
    if len(window) < 3:
        raise InsufficientHistory(f"mode decomposition needs at least 3 frames, got {len(window)}")
    _check_rcond(rcond)
    return decompose_snapshots(window.snapshots, rcond, strict, window.dt)


if __name__ == "__main__":
    print("Testing KMD Module...")
    angle = 0.1
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    states = [np.array([1.0, 0.0])]
    for _ in range(10):
        states.append(rotation @ states[-1])
    window = StreamWindow.from_array(np.array(states), dt=1 / 30)
    estimate = estimate_koopman(window)
    print(f"Rank {estimate.rank}, |K - R|_F = {np.linalg.norm(estimate.operator - rotation):.2e}")
    modes = decompose_modes(window)
    print(f"Eigenvalue phases: {np.angle(modes.eigenvalues)}")
    print(f"Frequencies (Hz): {modes.frequencies()}")
