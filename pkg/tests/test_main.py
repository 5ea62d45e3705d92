import os

import numpy as np

import main
from core import detector_module
from core.kmd_module import KoopmanEstimate


def test_validate_prints_the_summary(capsys):
    assert main.main(["validate"]) == main.EXIT_OK
    output = capsys.readouterr().out
    assert "Buses: 10" in output
    assert "Config hash:" in output


def test_invalid_override_exits_with_validation_code():
    assert main.main(["validate", "--n-tilde", "500"]) == main.EXIT_INVALID


def test_missing_scenario_exits_with_validation_code():
    assert main.main(["validate", "--scenario", "no_such_scenario"]) == main.EXIT_INVALID


def test_plot_data_without_a_run_exits_with_runtime_code(tmp_path):
    assert main.main(["plot-data", "--out", str(tmp_path)]) == main.EXIT_RUNTIME


def test_detect_without_a_recorded_stream_exits_with_runtime_code(tmp_path, small_scenario):
    assert main.main(["detect", "--scenario", small_scenario, "--out", str(tmp_path)]) == main.EXIT_RUNTIME


def test_end_to_end_run_and_plot_data(tmp_path, small_scenario, capsys):
    out_dir = str(tmp_path / "cli")
    assert main.main(["run", "--scenario", small_scenario, "--out", out_dir, "--log-level", "WARNING"]) == main.EXIT_OK
    assert main.main(["plot-data", "--out", out_dir, "--which", "clusters"]) == main.EXIT_OK
    assert os.path.exists(os.path.join(out_dir, "plot_clusters.csv"))
    assert "Attack verdicts:" in capsys.readouterr().out


def test_staged_verbs_chain(tmp_path, small_scenario):
    out_dir = str(tmp_path / "staged")
    for verb in ("simulate", "attack", "detect"):
        assert main.main([verb, "--scenario", small_scenario, "--out", out_dir]) == main.EXIT_OK
    assert os.path.exists(os.path.join(out_dir, "metrics.json"))


def test_overflowing_prediction_exits_with_runtime_code(tmp_path, small_scenario, monkeypatch):
    def explosive(window, rcond=None, strict=False):
        return KoopmanEstimate(1e200 * np.eye(window.p), window.p, 0.0, window.dt)

    monkeypatch.setattr(detector_module, "estimate_koopman", explosive)
    assert main.main(["run", "--scenario", small_scenario, "--out", str(tmp_path / "run")]) == main.EXIT_RUNTIME
