"""Long scenario-calibration checks, deselected by default (`pytest -m acceptance`)."""
import time

import numpy as np
import pytest
from scipy.linalg import block_diag

from config.app_config import load_scenario
from core.detector_module import WindowConfig, detect_step
from core.kmd_module import StreamWindow, estimate_koopman, predict
from core.pipeline_module import run_pipeline
from helpers import rotation, trajectory

pytestmark = pytest.mark.acceptance


def stable_oscillatory_system(p, seed):
    """Random A similar to damped rotation blocks with radii in [0.9, 0.98]."""
    rng = np.random.default_rng(seed)
    blocks = [rng.uniform(0.9, 0.98) * rotation(rng.uniform(0.1, 1.0)) for _ in range(p // 2)]
    if p % 2:
        blocks.append(np.array([[rng.uniform(0.9, 0.98)]]))
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    return q @ block_diag(*blocks) @ q.T, rng.standard_normal(p)


@pytest.mark.parametrize("seed", range(20))
def test_operator_recovery_and_prediction(seed):
    p = 2 + seed % 5
    system, start = stable_oscillatory_system(p, seed)
    states = trajectory(system, start, 61)
    window = StreamWindow.from_array(states[:51], dt=1.0 / 30.0)

    estimate = estimate_koopman(window)
    assert np.linalg.norm(estimate.operator - system) <= 1e-8

    predicted = np.array([frame.values for frame in predict(estimate, window.last(), 10)])
    actual = states[51:]
    assert np.linalg.norm(predicted - actual) / np.linalg.norm(actual) <= 1e-6


def test_multiplicative_attack_is_identified_within_a_second(tmp_path):
    scenario = load_scenario("multiplicative_attack")
    started = time.perf_counter()
    artifacts = run_pipeline(scenario, str(tmp_path / "attack"))
    elapsed = time.perf_counter() - started

    metrics = artifacts.metrics
    assert metrics["latency_samples"] is not None
    assert metrics["latency_samples"] <= 30
    assert metrics["steady_attack"]["precision"] == 1.0
    assert metrics["steady_attack"]["recall"] == 1.0
    assert elapsed < 10.0


def test_load_step_alone_never_triggers(tmp_path):
    artifacts = run_pipeline(load_scenario("load_step_only"), str(tmp_path / "null"))
    assert artifacts.metrics["attack_verdicts"] == 0


def test_detect_step_meets_the_real_time_budget():
    rng = np.random.default_rng(0)
    cfg = WindowConfig(n=120, n_tilde=12)
    t = np.arange(cfg.n + 1) / 30.0
    values = np.sin(np.outer(t, rng.uniform(0.5, 3.0, 136)) + rng.uniform(0, np.pi, 136))
    history = StreamWindow.from_array(values, dt=1.0 / 30.0)

    detect_step(history, cfg)
    durations = []
    for _ in range(15):
        started = time.perf_counter()
        detect_step(history, cfg)
        durations.append(time.perf_counter() - started)
    assert np.median(durations) < 0.05
