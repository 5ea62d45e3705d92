"""Attack module for KoopWatch.

False-data-injection (step, ramp, random, trapezoidal, multiplicative, replay)
and denial-of-service (time_delay, packet_loss, freezing) transforms applied to
the measurement stream between the sensors and the controller/detector.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from core.errors import DimensionMismatch, InvalidSpec
from core.kmd_module import MeasurementFrame, StreamWindow

logger = logging.getLogger(__name__)

TIME_TOLERANCE = 1e-9

# Parameter defaults per kind; None marks a required parameter.
ATTACK_PARAMS = {
    "step": {"magnitude": None},
    "ramp": {"rate": None},
    "random": {"bound": None},
    "trapezoidal": {"rise": None, "hold": None, "fall": None, "peak": None},
    "multiplicative": {"gamma": None, "baseline": 2.0},
    "replay": {"offset": None},
    "time_delay": {"delay": None},
    "packet_loss": {"probability": None, "omission": False},
    "freezing": {},
}
ATTACK_KINDS = tuple(ATTACK_PARAMS)


@dataclass(frozen=True, eq=False)
class AttackSpec:
    """One attack on a set of sensor channels over [t_start, t_end] seconds."""
    kind: str
    targets: tuple
    t_start: float
    t_end: float
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_PARAMS:
            raise InvalidSpec(f"unknown attack kind {self.kind!r}; valid kinds: {', '.join(ATTACK_KINDS)}")
        targets = tuple(sorted({int(target) for target in self.targets}))
        if not targets:
            raise InvalidSpec("an attack needs at least one target sensor")
        if min(targets) < 0:
            raise InvalidSpec(f"target indices must be non-negative, got {targets}")
        if not self.t_start < self.t_end:
            raise InvalidSpec(f"t_start ({self.t_start}) must precede t_end ({self.t_end})")
        allowed = ATTACK_PARAMS[self.kind]
        unknown = sorted(set(self.params) - set(allowed))
        if unknown:
            raise InvalidSpec(f"{self.kind} attack does not take {', '.join(unknown)}; valid parameters: {', '.join(allowed) or 'none'}")
        params = dict(allowed)
        params.update(self.params)
        missing = [name for name, value in params.items() if value is None]
        if missing:
            raise InvalidSpec(f"{self.kind} attack needs {', '.join(missing)}")
        _check_params(self.kind, params)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "params", params)

    def active(self, t):
        return self.t_start - TIME_TOLERANCE <= t <= self.t_end + TIME_TOLERANCE

    def check_dimension(self, p):
        if self.targets[-1] >= p:
            raise InvalidSpec(f"target {self.targets[-1]} outside the {p} sensor channels")


def _check_params(kind, params):
    if kind == "random" and params["bound"] < 0:
        raise InvalidSpec(f"random bound must be non-negative, got {params['bound']}")
    if kind == "trapezoidal":
        if min(params["rise"], params["hold"], params["fall"]) < 0:
            raise InvalidSpec("trapezoid rise, hold and fall times must be non-negative")
    if kind == "multiplicative" and params["baseline"] <= 0:
        raise InvalidSpec(f"multiplicative baseline window must be positive, got {params['baseline']}")
    if kind == "replay" and params["offset"] <= 0:
        raise InvalidSpec(f"replay offset must be positive, got {params['offset']}")
    if kind == "time_delay" and (params["delay"] < 1 or int(params["delay"]) != params["delay"]):
        raise InvalidSpec(f"time delay must be a positive whole number of samples, got {params['delay']}")
    if kind == "packet_loss" and not 0.0 <= params["probability"] < 1.0:
        raise InvalidSpec(f"packet loss probability must lie in [0, 1), got {params['probability']}")


def trapezoid(tau, rise, hold, fall, peak):
    """Piecewise-linear rise / hold / fall profile reaching `peak`, zero afterwards."""
    if tau < rise:
        return peak * tau / rise
    if tau < rise + hold:
        return peak
    if tau < rise + hold + fall:
        return peak * (1.0 - (tau - rise - hold) / fall)
    return 0.0


class AttackInjector:
    """Causal, stateful realization of one AttackSpec.

    Called once per frame in stream order, it keeps the history the replay,
    delay, freezing, multiplicative and packet-loss kinds need.
    """
    def __init__(self, spec, dt):
        """Initialize the injector.
        Args:
            spec (AttackSpec): Attack to realize.
            dt (float): Sample interval of the stream in seconds.
        """
        self.spec = spec
        self.dt = dt
        self.targets = np.array(spec.targets)
        self.rng = np.random.default_rng(spec.seed)
        self.history = []
        self.times = []
        self.last_delivered = None
        self.frozen = None
        self.baseline = None
        self.warnings = []
        self.metadata = {"kind": spec.kind, "held_samples": 0}
        if spec.kind == "packet_loss":
            self.metadata["omission"] = bool(spec.params["omission"])

    def _warn(self, message):
        if message not in self.warnings:
            self.warnings.append(message)
            logger.warning(message)

    def _lagged(self, index, lag):
        source = index - lag
        if source < 0:
            self._warn(f"{self.spec.kind} attack needs {lag} samples of history; holding the first frame")
            source = 0
        return self.history[source][self.targets]

    def _baseline(self, current):
        window = self.spec.params["baseline"]
        start = self.spec.t_start - window - TIME_TOLERANCE
        rows = [values[self.targets] for t, values in zip(self.times[:-1], self.history[:-1])
                if start <= t < self.spec.t_start - TIME_TOLERANCE]
        if not rows:
            self._warn("multiplicative attack has no baseline history; using the first attacked sample")
            return current.copy()
        return np.mean(rows, axis=0)

    def __call__(self, frame):
        spec = self.spec
        index = len(self.history)
        values = frame.values
        self.history.append(values)
        self.times.append(frame.t)
        received = np.array(values)

        if spec.active(frame.t):
            if spec.targets[-1] >= values.shape[0]:
                raise InvalidSpec(f"target {spec.targets[-1]} outside the {values.shape[0]} sensor channels")
            targets = self.targets
            tau = frame.t - spec.t_start
            params = spec.params
            kind = spec.kind
            if kind == "step":
                received[targets] += params["magnitude"]
            elif kind == "ramp":
                received[targets] += params["rate"] * tau
            elif kind == "random":
                received[targets] += self.rng.uniform(-params["bound"], params["bound"], size=targets.shape[0])
            elif kind == "trapezoidal":
                received[targets] += trapezoid(tau, params["rise"], params["hold"], params["fall"], params["peak"])
            elif kind == "multiplicative":
                if self.baseline is None:
                    self.baseline = self._baseline(values[targets])
                received[targets] += params["gamma"] * tau * (values[targets] - self.baseline)
            elif kind == "replay":
                received[targets] = self._lagged(index, int(round(params["offset"] / self.dt)))
            elif kind == "time_delay":
                received[targets] = self._lagged(index, int(params["delay"]))
            elif kind == "packet_loss":
                dropped = self.rng.random(targets.shape[0]) < params["probability"]
                if self.last_delivered is not None and np.any(dropped):
                    lost = targets[dropped]
                    received[lost] = self.last_delivered[lost]
                    self.metadata["held_samples"] += int(lost.shape[0])
            elif kind == "freezing":
                if self.frozen is None:
                    self.frozen = values[targets].copy()
                received[targets] = self.frozen

        self.last_delivered = received
        return MeasurementFrame(frame.t, received)


def chain(injectors):
    """Composes injectors into one frame -> frame hook applied in order."""
    def hook(frame):
        for injector in injectors:
            frame = injector(frame)
        return frame
    return hook


def apply_attack(stream, spec):
    """Applies one attack to a recorded stream.

    Args:
        stream (StreamWindow): True, equispaced frames.
        spec (AttackSpec): Attack description.

    Returns:
        StreamWindow: Received frames; off-target channels and samples outside
        [t_start, t_end] are copied unchanged.
    """
    spec.check_dimension(stream.p)
    injector = AttackInjector(spec, stream.dt)
    return StreamWindow(tuple(injector(frame) for frame in stream.frames), stream.dt)


def attack_signal(true_frame, received_frame):
    """Injected signal a_k = y~_k - y_k."""
    if true_frame.dim != received_frame.dim:
        raise DimensionMismatch(f"true frame has {true_frame.dim} values, received has {received_frame.dim}")
    return MeasurementFrame(received_frame.t, received_frame.values - true_frame.values)


def ground_truth_labels(specs, times, p):
    """Boolean (len(times), p) matrix marking the channels under attack at each sample."""
    times = np.asarray(times, dtype=np.float64)
    labels = np.zeros((times.shape[0], p), dtype=bool)
    for spec in specs:
        spec.check_dimension(p)
        active = (times >= spec.t_start - TIME_TOLERANCE) & (times <= spec.t_end + TIME_TOLERANCE)
        labels[np.ix_(active, np.array(spec.targets))] = True
    return labels
