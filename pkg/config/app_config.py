"""Configuration module for KoopWatch.

Scenario files are JSON documents deep-merged over config/default_config.json
and turned into a typed ScenarioConfig.
"""

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from core.attack_module import ATTACK_KINDS, AttackSpec
from core.detector_module import WindowConfig
from core.errors import DimensionMismatch, InvalidSpec, ScenarioParseError, ScenarioValidationError
from core.grid_module import EVENT_KINDS, ControllerConfig, EventSpec, NetworkModel, build_susceptance

logger = logging.getLogger(__name__)

CONFIG_DIR = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG_PATH = os.path.join(CONFIG_DIR, "default_config.json")
DEFAULT_SCENARIO_DIR = os.path.join(CONFIG_DIR, "scenarios")
SCENARIO_DIR_ENV = "KOOPWATCH_SCENARIO_DIR"
INJECTION_BALANCE_TOLERANCE = 1e-9


def deep_merge(base, override):
    """Recursively merges `override` into a copy of `base`; lists and scalars are replaced."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_json(path):
    """Reads a JSON document, reporting syntax errors with line and column."""
    try:
        with open(path, "r") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ScenarioParseError("file not found", path=path) from e
    except json.JSONDecodeError as e:
        raise ScenarioParseError(e.msg, path=path, line=e.lineno, column=e.colno) from e


def resolve_scenario_path(name):
    """Returns `name` if it exists, else looks it up in the scenario directory (with or without .json)."""
    if os.path.exists(name):
        return name
    directory = os.environ.get(SCENARIO_DIR_ENV, DEFAULT_SCENARIO_DIR)
    for candidate in (os.path.join(directory, name), os.path.join(directory, name + ".json")):
        if os.path.exists(candidate):
            return candidate
    raise ScenarioParseError(f"scenario not found (searched {directory})", path=name)


def config_hash(document):
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class AppConfig:
    """Layered JSON configuration: defaults, then a scenario file, then in-memory overrides."""
    def __init__(self, default_path=DEFAULT_CONFIG_PATH, scenario_path=None):
        self.default_config_path = default_path
        self.scenario_path = scenario_path
        self.config = read_json(default_path)
        if scenario_path is not None:
            scenario = read_json(scenario_path)
            if not isinstance(scenario, dict):
                raise ScenarioParseError("scenario must be a JSON object", path=scenario_path)
            network = scenario.get("network", {})
            # A scenario network given as a full matrix replaces the default line list, and vice versa.
            if isinstance(network, dict):
                if "susceptance" in network and "lines" not in network:
                    self.config.get("network", {}).pop("lines", None)
                if "lines" in network and "susceptance" not in network:
                    self.config.get("network", {}).pop("susceptance", None)
            self.config = deep_merge(self.config, scenario)
            logger.info("Loaded scenario %s over %s", scenario_path, default_path)

    def get_setting(self, key, default=None):
        """Retrieves a setting by dotted key, e.g. "detector.n_tilde"."""
        value = self.config
        try:
            for k in key.split("."):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set_setting(self, key, value):
        """Sets a setting by dotted key, creating intermediate sections."""
        keys = key.split(".")
        section = self.config
        for k in keys[:-1]:
            section = section.setdefault(k, {})
        section[keys[-1]] = value

    def apply_overrides(self, overrides):
        """Applies CLI overrides (seed, n, n_tilde, tau); None values are skipped."""
        targets = {
            "seed": ("simulation.seed", "detector.seed"),
            "n": ("detector.n",),
            "n_tilde": ("detector.n_tilde",),
            "tau": ("detector.tau",),
        }
        for name, value in (overrides or {}).items():
            if value is None:
                continue
            if name not in targets:
                raise ScenarioValidationError(name, f"unknown override; valid overrides: {', '.join(targets)}")
            for key in targets[name]:
                self.set_setting(key, value)

    @property
    def hash(self):
        return config_hash(self.config)


@dataclass(frozen=True)
class SimulationConfig:
    """Run length T (s), sample interval dt (s), process noise on omega and its seed."""
    T: float = 80.0
    dt: float = 1.0 / 30.0
    noise_std: float = 0.0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Validated, typed scenario."""
    network: NetworkModel
    controller: ControllerConfig
    events: tuple
    attacks: tuple
    simulation: SimulationConfig
    detector: WindowConfig
    detector_seed: int
    config_hash: str
    log_level: str = "INFO"
    source: str = None

    @property
    def p(self):
        return self.network.n_channels


def _require(section, key, prefix):
    if not isinstance(section, dict) or key not in section:
        raise ScenarioValidationError(f"{prefix}.{key}", "missing required field")
    return section[key]


def _number(value, field, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioValidationError(field, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ScenarioValidationError(field, f"expected an integer, got {value!r}")
    return int(value) if integer else float(value)


def _vector(value, field, length):
    try:
        array = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ScenarioValidationError(field, f"expected a list of numbers: {e}") from e
    if array.shape != (length,):
        raise ScenarioValidationError(field, f"expected {length} values (one per bus), got shape {array.shape}")
    return array


def _parse_network(section):
    if not isinstance(section, dict):
        raise ScenarioValidationError("network", "expected an object")
    inertia = _require(section, "inertia", "network")
    if not isinstance(inertia, list) or not inertia:
        raise ScenarioValidationError("network.inertia", "expected a non-empty list")
    n = len(inertia)
    if "susceptance" in section:
        try:
            susceptance = np.array(section["susceptance"], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ScenarioValidationError("network.susceptance", f"expected a numeric matrix: {e}") from e
        if susceptance.shape != (n, n):
            raise ScenarioValidationError("network.susceptance", f"expected a {n}x{n} matrix, got shape {susceptance.shape}")
    elif "lines" in section:
        try:
            susceptance = build_susceptance(n, section["lines"])
        except (InvalidSpec, TypeError, ValueError) as e:
            raise ScenarioValidationError("network.lines", str(e)) from e
    else:
        raise ScenarioValidationError("network", "needs either 'susceptance' or 'lines'")

    pinned = tuple(section.get("pinned", ()))
    injection = _vector(_require(section, "injection", "network"), "network.injection", n)
    if not pinned and abs(injection.sum()) > INJECTION_BALANCE_TOLERANCE:
        raise ScenarioValidationError("network.injection", f"must sum to zero without pinned buses, sums to {injection.sum():.6g}")
    try:
        return NetworkModel(
            susceptance=susceptance,
            inertia=_vector(inertia, "network.inertia", n),
            damping=_vector(_require(section, "damping", "network"), "network.damping", n),
            injection=injection,
            pinned=pinned,
            magnitude_channels=bool(section.get("magnitude_channels", False)),
        )
    except (InvalidSpec, DimensionMismatch) as e:
        raise ScenarioValidationError("network", str(e)) from e


def _parse_events(entries, n_buses):
    if not isinstance(entries, list):
        raise ScenarioValidationError("events", "expected a list")
    events = []
    for i, entry in enumerate(entries):
        prefix = f"events[{i}]"
        kind = _require(entry, "kind", prefix)
        if kind not in EVENT_KINDS:
            raise ScenarioValidationError(f"{prefix}.kind", f"unknown event kind {kind!r}; valid kinds: {', '.join(EVENT_KINDS)}")
        bus = _number(_require(entry, "bus", prefix), f"{prefix}.bus", integer=True)
        if not 0 <= bus < n_buses:
            raise ScenarioValidationError(f"{prefix}.bus", f"must lie in [0, {n_buses}), got {bus}")
        try:
            events.append(EventSpec(kind, bus, _number(_require(entry, "t_start", prefix), f"{prefix}.t_start"),
                                    _number(_require(entry, "delta_p", prefix), f"{prefix}.delta_p")))
        except InvalidSpec as e:
            raise ScenarioValidationError(prefix, str(e)) from e
    return tuple(events)


def _parse_attacks(entries, p):
    if not isinstance(entries, list):
        raise ScenarioValidationError("attacks", "expected a list")
    attacks = []
    for i, entry in enumerate(entries):
        prefix = f"attacks[{i}]"
        kind = _require(entry, "kind", prefix)
        if kind not in ATTACK_KINDS:
            raise ScenarioValidationError(f"{prefix}.kind", f"unknown attack kind {kind!r}; valid kinds: {', '.join(ATTACK_KINDS)}")
        targets = _require(entry, "targets", prefix)
        if not isinstance(targets, list):
            raise ScenarioValidationError(f"{prefix}.targets", "expected a list of sensor indices")
        for target in targets:
            index = _number(target, f"{prefix}.targets", integer=True)
            if not 0 <= index < p:
                raise ScenarioValidationError(f"{prefix}.targets", f"sensor {index} outside [0, {p})")
        try:
            attacks.append(AttackSpec(
                kind=kind,
                targets=tuple(targets),
                t_start=_number(_require(entry, "t_start", prefix), f"{prefix}.t_start"),
                t_end=_number(_require(entry, "t_end", prefix), f"{prefix}.t_end"),
                params=dict(entry.get("params", {})),
                seed=_number(entry.get("seed", i), f"{prefix}.seed", integer=True),
            ))
        except (InvalidSpec, TypeError) as e:
            raise ScenarioValidationError(prefix, str(e)) from e
    return tuple(attacks)


def _parse_detector(section):
    if not isinstance(section, dict):
        raise ScenarioValidationError("detector", "expected an object")
    fields = {
        "n": True, "n_tilde": True, "rcond": False, "epsilon": False,
        "k": True, "tau": False, "min_flag_persistence": True,
    }
    values = {name: _number(section[name], f"detector.{name}", integer)
              for name, integer in fields.items() if name in section}
    values["strict"] = bool(section.get("strict", False))
    try:
        cfg = WindowConfig(**values)
    except ValueError as e:
        field, _, message = str(e).partition(": ")
        raise ScenarioValidationError(f"detector.{field}", message) from e
    seed = _number(section.get("seed", 0), "detector.seed", integer=True)
    return cfg, seed


def _parse_simulation(section):
    if not isinstance(section, dict):
        raise ScenarioValidationError("simulation", "expected an object")
    T = _number(section.get("T", 80.0), "simulation.T")
    dt = _number(section.get("dt", 1.0 / 30.0), "simulation.dt")
    noise_std = _number(section.get("noise_std", 0.0), "simulation.noise_std")
    seed = _number(section.get("seed", 0), "simulation.seed", integer=True)
    if T <= 0:
        raise ScenarioValidationError("simulation.T", f"must be positive, got {T}")
    if dt <= 0 or dt >= T:
        raise ScenarioValidationError("simulation.dt", f"must lie in (0, T), got {dt}")
    if noise_std < 0:
        raise ScenarioValidationError("simulation.noise_std", f"must be non-negative, got {noise_std}")
    return SimulationConfig(T, dt, noise_std, seed)


def build_scenario(app_config, source=None):
    """Validates the merged document of an AppConfig into a ScenarioConfig."""
    document = app_config.config
    network = _parse_network(document.get("network"))
    controller_section = document.get("controller", {})
    integral_gain = _number(controller_section.get("integral_gain", 0.0), "controller.integral_gain")
    if integral_gain < 0:
        raise ScenarioValidationError("controller.integral_gain", f"must be non-negative, got {integral_gain}")
    controller = ControllerConfig(
        gain=controller_section.get("gain", 0.0),
        enabled=bool(controller_section.get("enabled", True)),
        integral_gain=integral_gain,
    )
    gain = np.asarray(controller.gain, dtype=np.float64)
    if gain.ndim not in (0, 2) or (gain.ndim == 2 and gain.shape != (network.n_buses, network.n_buses)):
        raise ScenarioValidationError("controller.gain", f"expected a scalar or {network.n_buses}x{network.n_buses} matrix")
    simulation = _parse_simulation(document.get("simulation", {}))
    detector, detector_seed = _parse_detector(document.get("detector", {}))
    if detector.n + 1 > round(simulation.T / simulation.dt):
        raise ScenarioValidationError("detector.n", f"window of {detector.n + 1} samples exceeds the {round(simulation.T / simulation.dt)} simulated samples")
    if detector.k > network.n_channels:
        raise ScenarioValidationError("detector.k", f"cannot exceed the {network.n_channels} sensors")
    return ScenarioConfig(
        network=network,
        controller=controller,
        events=_parse_events(document.get("events", []), network.n_buses),
        attacks=_parse_attacks(document.get("attacks", []), network.n_channels),
        simulation=simulation,
        detector=detector,
        detector_seed=detector_seed,
        config_hash=app_config.hash,
        log_level=str(document.get("log_level", "INFO")),
        source=source,
    )


def load_scenario(path=None, overrides=None):
    """Loads and validates a scenario.

    Args:
        path (str, optional): Scenario file or bare name in the scenario directory;
            None loads the bundled defaults alone.
        overrides (dict, optional): CLI overrides, keys seed / n / n_tilde / tau.

    Returns:
        ScenarioConfig: Frozen, validated configuration.

    Raises:
        ScenarioParseError: Missing file or malformed JSON (with line and column).
        ScenarioValidationError: Semantic problem, message prefixed with the dotted field.
    """
    resolved = resolve_scenario_path(path) if path is not None else None
    app_config = AppConfig(scenario_path=resolved)
    app_config.apply_overrides(overrides)
    scenario = build_scenario(app_config, source=resolved or DEFAULT_CONFIG_PATH)
    logger.info("Scenario %s: %d buses, %d sensors, %d events, %d attacks (hash %s)",
                scenario.source, scenario.network.n_buses, scenario.p, len(scenario.events),
                len(scenario.attacks), scenario.config_hash[:12])
    return scenario


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    scenario = load_scenario()
    config = AppConfig()
    print("Buses:", scenario.network.n_buses)
    print("Window:", config.get_setting("detector.n"), "/", config.get_setting("detector.n_tilde"))
    print("Non-existent key (with default):", config.get_setting("non.existent.key", "default_val"))
    print("Config hash:", scenario.config_hash)
