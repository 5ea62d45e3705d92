"""Pipeline module for KoopWatch.

Stages of one scenario run and the tables behind the time-series and
mode-spread figures. Each stage reads its inputs from and writes its outputs to
the run directory, so the CLI verbs can be chained or run end to end.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from core.attack_module import AttackInjector, apply_attack, chain, ground_truth_labels
from core.detector_module import detect_stream
from core.errors import InvalidParameter, KoopWatchError, MissingArtifact
from core.grid_module import simulate
from core.input_module import InputModule
from core.metric_module import score_reports
from data import storage_manager
from data.storage_manager import StorageManager

logger = logging.getLogger(__name__)

PLOT_KINDS = ("timeseries", "mode_spread", "clusters")


@dataclass
class RunArtifacts:
    """Paths of a run's artifact files plus its metrics summary."""
    out_dir: str
    true_stream: str
    received_stream: str
    labels: str
    reports: str
    metrics_path: str
    metrics: dict = field(default_factory=dict)
    config_hash: str = ""


def _log_failure(cfg, stage, error):
    logger.error("Scenario %s failed during %s: %s", cfg.source, stage, error)


def simulate_scenario(cfg, out_dir):
    """Closed-loop simulation with the scenario's attacks injected between sensors and controller.

    Writes the true and received streams and the ground-truth labels.

    Returns:
        tuple: (SimulationResult, list of AttackInjector)
    """
    sim = cfg.simulation
    injectors = [AttackInjector(spec, sim.dt) for spec in cfg.attacks]
    try:
        result = simulate(cfg.network, cfg.controller, cfg.events, chain(injectors) if injectors else None,
                          T=sim.T, dt=sim.dt, noise_std=sim.noise_std, seed=sim.seed)
    except KoopWatchError as e:
        _log_failure(cfg, "simulation", e)
        raise
    storage = StorageManager(out_dir, cfg.config_hash)
    storage.write_stream(storage_manager.TRUE_STREAM, result.true_stream)
    storage.write_stream(storage_manager.RECEIVED_STREAM, result.received_stream)
    times = result.true_stream.times
    storage.write_labels(times, ground_truth_labels(cfg.attacks, times, cfg.p))
    for injector in injectors:
        for warning in injector.warnings:
            logger.warning("%s attack on %s: %s", injector.spec.kind, list(injector.spec.targets), warning)
    return result, injectors


def attack_recorded(cfg, out_dir):
    """Re-applies the scenario's attacks open-loop to a recorded true stream.

    Returns:
        StreamWindow: Received stream, also written to the run directory.
    """
    storage = StorageManager(out_dir, cfg.config_hash)
    received = storage.read_stream(storage_manager.TRUE_STREAM)
    try:
        for spec in cfg.attacks:
            received = apply_attack(received, spec)
    except KoopWatchError as e:
        _log_failure(cfg, "attack injection", e)
        raise
    storage.write_stream(storage_manager.RECEIVED_STREAM, received)
    storage.write_labels(received.times, ground_truth_labels(cfg.attacks, received.times, received.p))
    return received


def detect_recorded(cfg, out_dir):
    """Runs the streaming detector over the recorded received stream and scores it.

    Returns:
        tuple: (list of DetectionReport, metrics dict)
    """
    storage = StorageManager(out_dir, cfg.config_hash)
    source = InputModule(out_dir, storage_manager.RECEIVED_STREAM)
    try:
        reports = list(detect_stream(source, cfg.detector, cfg.detector_seed, source.dt))
    except KoopWatchError as e:
        _log_failure(cfg, "detection", e)
        raise
    finally:
        source.release()
    storage.write_reports(reports)
    if storage.exists(storage_manager.LABELS):
        _, labels = storage.read_labels()
    else:
        labels = np.zeros((reports[-1].step + 1 if reports else 0, cfg.p), dtype=bool)
    metrics = score_reports(reports, labels, cfg.simulation.dt)
    storage.write_metrics(metrics)
    logger.info("Detection finished: %d reports, %d attack verdicts, latency %s samples",
                metrics["reports"], metrics["attack_verdicts"], metrics["latency_samples"])
    return reports, metrics


def load_artifacts(out_dir):
    """Collects the artifacts of a finished run; raises MissingArtifact when one is absent."""
    storage = StorageManager(out_dir)
    paths = [storage.require(name) for name in (storage_manager.TRUE_STREAM, storage_manager.RECEIVED_STREAM,
                                                storage_manager.LABELS, storage_manager.REPORTS, storage_manager.METRICS)]
    header = storage.read_header(storage_manager.METRICS)
    return RunArtifacts(out_dir, *paths, metrics=storage.read_metrics(), config_hash=header.get("config_hash", ""))


def run_pipeline(cfg, out_dir):
    """End-to-end run: simulate with attacks, detect, score and write every artifact.

    Args:
        cfg (ScenarioConfig): Validated scenario.
        out_dir (str): Run directory.

    Returns:
        RunArtifacts: Written files and the metrics summary.
    """
    logger.info("Running scenario %s into %s", cfg.source, out_dir)
    simulate_scenario(cfg, out_dir)
    detect_recorded(cfg, out_dir)
    return load_artifacts(out_dir)


def _default_step(reports):
    for report in reports:
        if report.attack:
            return report.step
    return reports[-1].step


def emit_plot_data(artifacts, which, step=None):
    """Writes a plot-ready table next to the run's artifacts.

    Args:
        artifacts (RunArtifacts): Finished run.
        which (str): "timeseries" (t, sensor, value, true_value, attacked),
            "mode_spread" (sensor x mode matrix of one detection step) or
            "clusters" (t, sensor, cluster, flagged per detection step).
        step (int, optional): Detection step for mode_spread; defaults to the
            first attack verdict, else the last report.

    Returns:
        str: Path of the written table.
    """
    if which not in PLOT_KINDS:
        raise InvalidParameter(f"unknown plot data {which!r}; valid kinds: {', '.join(PLOT_KINDS)}")
    storage = StorageManager(artifacts.out_dir, artifacts.config_hash)

    if which == "timeseries":
        true_stream = storage.read_stream(storage_manager.TRUE_STREAM)
        received = storage.read_stream(storage_manager.RECEIVED_STREAM)
        _, labels = storage.read_labels()
        samples, p = received.snapshots.shape
        table = pd.DataFrame({
            "t": np.repeat(received.times, p),
            "sensor": np.tile(np.arange(p), samples),
            "value": received.snapshots.reshape(-1),
            "true_value": true_stream.snapshots.reshape(-1),
            "attacked": labels.reshape(-1).astype(int),
        })
        return storage.write_table("plot_timeseries.csv", table)

    reports = storage.read_reports()
    if not reports:
        raise MissingArtifact(f"{artifacts.reports} holds no detection reports")

    if which == "mode_spread":
        step = _default_step(reports) if step is None else step
        matches = [report for report in reports if report.step == step]
        if not matches:
            raise MissingArtifact(f"no detection report at step {step}")
        spread = matches[0].mode_spread
        table = pd.DataFrame(spread, columns=[f"m{j}" for j in range(spread.shape[1])])
        table.insert(0, "sensor", np.arange(spread.shape[0]))
        return storage.write_table(f"plot_mode_spread_step{step}.csv", table)

    rows = []
    for report in reports:
        for sensor, label in enumerate(report.labels):
            rows.append((report.step, report.t, sensor, label, int(sensor in report.flagged)))
    table = pd.DataFrame(rows, columns=["step", "t", "sensor", "cluster", "flagged"])
    return storage.write_table("plot_clusters.csv", table)
