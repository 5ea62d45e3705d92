"""Grid simulation module for KoopWatch.

Closed-loop swing-equation network:

    d(delta_i)/dt = omega_i
    M_i d(omega_i)/dt = P_i(t) - D_i omega_i - sum_j B_ij sin(delta_i - delta_j) + u_i

with proportional-integral feedback on the received frequency channels,
integrated by fixed-step RK4. Measurements are deviations from the nominal operating point.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from core.errors import DimensionMismatch, InvalidParameter, InvalidSpec, NumericalBlowup
from core.kmd_module import MeasurementFrame, StreamWindow

logger = logging.getLogger(__name__)

BLOWUP_LIMIT = 1e6
EVENT_KINDS = ("load_step",)
MAGNITUDE_PROXY_GAIN = 0.05


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Kron-reduced swing network: susceptances, inertias, damping and net injections (per unit).

    Buses listed in `pinned` are infinite buses held at their nominal state.
    With `magnitude_channels` the static |V| proxy is appended to every frame (p = 3N).
    """
    susceptance: np.ndarray
    inertia: np.ndarray
    damping: np.ndarray
    injection: np.ndarray
    pinned: tuple = ()
    magnitude_channels: bool = False

    def __post_init__(self):
        susceptance = np.array(self.susceptance, dtype=np.float64)
        n = susceptance.shape[0]
        if susceptance.shape != (n, n):
            raise DimensionMismatch(f"susceptance must be square, got {susceptance.shape}")
        if not np.allclose(susceptance, susceptance.T, rtol=0.0, atol=1e-12):
            raise InvalidSpec("susceptance matrix must be symmetric")
        arrays = {}
        for name in ("inertia", "damping", "injection"):
            values = np.array(getattr(self, name), dtype=np.float64)
            if values.shape != (n,):
                raise DimensionMismatch(f"{name} has shape {values.shape}, expected ({n},)")
            values.flags.writeable = False
            arrays[name] = values
        if np.any(arrays["inertia"] <= 0):
            raise InvalidSpec("inertia must be positive on every bus")
        if np.any(arrays["damping"] < 0):
            raise InvalidSpec("damping must be non-negative on every bus")
        pinned = tuple(sorted(int(bus) for bus in self.pinned))
        if any(not 0 <= bus < n for bus in pinned):
            raise InvalidSpec(f"pinned buses must lie in [0, {n}), got {pinned}")
        susceptance.flags.writeable = False
        object.__setattr__(self, "susceptance", susceptance)
        object.__setattr__(self, "pinned", pinned)
        for name, values in arrays.items():
            object.__setattr__(self, name, values)

    @property
    def n_buses(self):
        return self.susceptance.shape[0]

    @property
    def n_channels(self):
        return self.n_buses * (3 if self.magnitude_channels else 2)

    @property
    def free_mask(self):
        mask = np.ones(self.n_buses, dtype=bool)
        mask[list(self.pinned)] = False
        return mask


@dataclass(frozen=True, eq=False)
class SimState:
    """Voltage angles (rad) and frequency deviations (rad/s) per bus."""
    delta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        delta = np.array(self.delta, dtype=np.float64)
        omega = np.array(self.omega, dtype=np.float64)
        if delta.shape != omega.shape or delta.ndim != 1:
            raise DimensionMismatch(f"delta {delta.shape} and omega {omega.shape} must be equal-length vectors")
        delta.flags.writeable = False
        omega.flags.writeable = False
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "omega", omega)


@dataclass(frozen=True)
class ControllerConfig:
    """Output feedback on the received frequency channels.

    u = -gain * omega_received - integral_gain * z with dz/dt = omega_received.
    `gain` is a scalar or an N x N matrix; the integral term restores nominal
    frequency after a load change.
    """
    gain: object = 0.0
    enabled: bool = True
    integral_gain: float = 0.0

    def control(self, received_omega, integral=None):
        if not self.enabled:
            return np.zeros_like(received_omega)
        gain = np.asarray(self.gain, dtype=np.float64)
        if gain.ndim == 0:
            control = -float(gain) * received_omega
        else:
            control = -gain @ received_omega
        if integral is not None and self.integral_gain:
            control = control - self.integral_gain * integral
        return control


@dataclass(frozen=True)
class EventSpec:
    """Natural event; a load_step raises the load at `bus` by `delta_p` from `t_start` on."""
    kind: str
    bus: int
    t_start: float
    delta_p: float

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise InvalidSpec(f"unknown event kind {self.kind!r}; valid kinds: {', '.join(EVENT_KINDS)}")
        if self.t_start < 0:
            raise InvalidSpec(f"event start must be non-negative, got {self.t_start}")


def build_susceptance(n_buses, lines):
    """Symmetric susceptance matrix from `[i, j, b]` line entries (parallel lines add up)."""
    susceptance = np.zeros((n_buses, n_buses))
    for i, j, b in lines:
        i, j = int(i), int(j)
        if i == j or not (0 <= i < n_buses and 0 <= j < n_buses):
            raise InvalidSpec(f"line ({i}, {j}) is not a valid pair of distinct buses below {n_buses}")
        susceptance[i, j] += b
        susceptance[j, i] += b
    return susceptance


def _coupling(susceptance, delta):
    return np.sum(susceptance * np.sin(delta[:, np.newaxis] - delta[np.newaxis, :]), axis=1)


def injections_at(model, events, t):
    """Net injections P_i(t) with every load step active at time t subtracted."""
    injection = np.array(model.injection)
    for event in events:
        if t >= event.t_start - 1e-12:
            if not 0 <= event.bus < model.n_buses:
                raise InvalidSpec(f"event bus {event.bus} outside [0, {model.n_buses})")
            injection[event.bus] -= event.delta_p
    return injection


def equilibrium(model):
    """Nominal operating point: omega = 0 and power balance on every free bus.

    Angles are referenced to bus 0 (or held at zero on pinned buses).
    """
    n = model.n_buses
    if not np.any(model.injection):
        return SimState(np.zeros(n), np.zeros(n))

    if model.pinned:
        unknown = model.free_mask
    else:
        if abs(model.injection.sum()) > 1e-9:
            raise InvalidSpec(f"injections sum to {model.injection.sum():.3g}; without a pinned bus they must balance")
        unknown = np.ones(n, dtype=bool)
        unknown[0] = False

    def mismatch(x):
        delta = np.zeros(n)
        delta[unknown] = x
        return (model.injection - _coupling(model.susceptance, delta))[unknown]

    solution = scipy.optimize.root(mismatch, np.zeros(int(unknown.sum())), method="hybr", tol=1e-13)
    if not solution.success or np.max(np.abs(mismatch(solution.x))) > 1e-9:
        raise InvalidSpec(f"no power-flow equilibrium found: {solution.message}")
    delta = np.zeros(n)
    delta[unknown] = solution.x
    return SimState(delta, np.zeros(n))


def measure(state, nominal=None, t=0.0, magnitude_channels=False):
    """Measurement y = [delta - delta*; omega (; |V| - |V|*)] as a frame at time t."""
    nominal_delta = np.zeros_like(state.delta) if nominal is None else nominal.delta
    channels = [state.delta - nominal_delta, state.omega]
    if magnitude_channels:
        channels.append(MAGNITUDE_PROXY_GAIN * (np.cos(state.delta) - np.cos(nominal_delta)))
    return MeasurementFrame(t, np.concatenate(channels))


def energy(model, state):
    """E = 1/2 sum M w^2 - sum P delta - 1/2 sum_ij B_ij cos(delta_i - delta_j)."""
    delta = state.delta
    kinetic = 0.5 * np.sum(model.inertia * state.omega ** 2)
    potential = -np.sum(model.injection * delta)
    potential -= 0.5 * np.sum(model.susceptance * np.cos(delta[:, np.newaxis] - delta[np.newaxis, :]))
    return float(kinetic + potential)


def step(model, state, controller, received_frame, events, t, dt, integral=None):
    """Advances the closed loop by one RK4 step of length dt.

    The control input is computed from the frequency channels of the (possibly
    attacked) received frame and the controller's integral state `integral`,
    and held over the step, as are the injections.

    Returns:
        SimState: State at t + dt.
    """
    n = model.n_buses
    if received_frame.dim != model.n_channels:
        raise DimensionMismatch(f"received frame has {received_frame.dim} values, network measures {model.n_channels}")
    control = controller.control(received_frame.values[n:2 * n], integral)
    injection = injections_at(model, events, t)
    free = model.free_mask.astype(np.float64)

    def derivatives(delta, omega):
        acceleration = (injection - model.damping * omega - _coupling(model.susceptance, delta) + control) / model.inertia
        return omega * free, acceleration * free

    delta, omega = state.delta, state.omega
    k1d, k1w = derivatives(delta, omega)
    k2d, k2w = derivatives(delta + 0.5 * dt * k1d, omega + 0.5 * dt * k1w)
    k3d, k3w = derivatives(delta + 0.5 * dt * k2d, omega + 0.5 * dt * k2w)
    k4d, k4w = derivatives(delta + dt * k3d, omega + dt * k3w)
    delta = delta + dt / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d)
    omega = omega + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)

    if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(omega))) or \
       max(np.max(np.abs(delta)), np.max(np.abs(omega))) > BLOWUP_LIMIT:
        raise NumericalBlowup(f"state magnitude exceeded {BLOWUP_LIMIT:g} at t={t + dt:.4f}s", t=t + dt)
    return SimState(delta, omega)


@dataclass
class SimulationResult:
    """True and received streams of one closed-loop run."""
    true_stream: StreamWindow
    received_stream: StreamWindow
    nominal: SimState
    final_state: SimState = field(repr=False, default=None)


def simulate(model, controller, events=(), attack_hook=None, T=80.0, dt=1.0 / 30.0,
             noise_std=0.0, seed=0, initial_state=None):
    """Runs measure -> attack -> control -> step for round(T / dt) samples.

    Args:
        model (NetworkModel): Network to simulate.
        controller (ControllerConfig): Feedback acting on the received frequency channels.
        events (sequence[EventSpec]): Natural events.
        attack_hook (callable, optional): Maps each true frame to the received frame.
        T (float): Duration in seconds.
        dt (float): Sample and integration interval in seconds.
        noise_std (float): Std of Gaussian noise added to omega after every step.
        seed (int): Seed of the process-noise generator.
        initial_state (SimState, optional): Defaults to the nominal equilibrium.

    Returns:
        SimulationResult: Streams sampled at t = k * dt.
    """
    if T <= 0 or dt <= 0:
        raise InvalidParameter(f"T and dt must be positive, got T={T}, dt={dt}")
    events = tuple(events)
    nominal = equilibrium(model)
    state = nominal if initial_state is None else initial_state
    rng = np.random.default_rng(seed)
    free = model.free_mask
    samples = int(round(T / dt))
    logger.info("Simulating %d buses for %d samples (dt=%.4g s, %d events)", model.n_buses, samples, dt, len(events))

    integral = np.zeros(model.n_buses)
    true_frames = []
    received_frames = []
    for k in range(samples):
        t = k * dt
        frame = measure(state, nominal, t, model.magnitude_channels)
        received = frame if attack_hook is None else attack_hook(frame)
        true_frames.append(frame)
        received_frames.append(received)
        if k == samples - 1:
            break
        state = step(model, state, controller, received, events, t, dt, integral)
        integral = integral + dt * received.values[model.n_buses:2 * model.n_buses]
        if noise_std > 0:
            omega = state.omega + noise_std * rng.standard_normal(model.n_buses) * free
            state = SimState(state.delta, omega)

    return SimulationResult(StreamWindow(tuple(true_frames), dt), StreamWindow(tuple(received_frames), dt), nominal, state)


if __name__ == "__main__":
    print("Testing Grid Module...")
    ring = [[i, (i + 1) % 4, 10.0] for i in range(4)]
    model = NetworkModel(build_susceptance(4, ring), [0.1, 0.2, 0.15, 0.1], [0.05] * 4, [0.2, -0.1, 0.1, -0.2])
    result = simulate(model, ControllerConfig(gain=0.2, integral_gain=0.5), [EventSpec("load_step", 2, 1.0, 0.1)], T=20.0)
    final = result.true_stream.last().values
    print(f"Final angle deviations: {np.round(final[:4], 4)}")
    print(f"Final frequency deviations: {np.round(final[4:], 5)}")
