import os

import numpy as np
import pytest

from core.detector_module import DetectionReport
from core.errors import MissingArtifact
from core.kmd_module import StreamWindow
from data.storage_manager import RECEIVED_STREAM, TRUE_STREAM, StorageManager, parse_header


def awkward_stream():
    values = np.array([[1 / 3, -2.5e17, 1e-300], [np.pi, 0.1 + 0.2, -0.0], [2 / 7, 1e-5, 123456789.123456789]])
    return StreamWindow.from_array(values, dt=1.0 / 30.0, t0=1.0 / 3.0)


def test_stream_round_trip_is_exact(tmp_path):
    storage = StorageManager(str(tmp_path), "abc")
    stream = awkward_stream()
    storage.write_stream(TRUE_STREAM, stream)
    restored = storage.read_stream(TRUE_STREAM)
    np.testing.assert_array_equal(restored.snapshots, stream.snapshots)
    np.testing.assert_array_equal(restored.times, stream.times)


def test_stream_file_layout(tmp_path):
    storage = StorageManager(str(tmp_path), "abc123")
    path = storage.write_stream(RECEIVED_STREAM, awkward_stream())
    with open(path) as f:
        lines = f.read().splitlines()
    assert lines[0] == "# schema=1 config_hash=abc123"
    assert lines[1] == "t,s0,s1,s2"
    assert len(lines) == 5


def test_header_parsing(tmp_path):
    storage = StorageManager(str(tmp_path), "deadbeef")
    storage.write_metrics({"reports": 0})
    assert storage.read_header("metrics.json") == {"schema": "1", "config_hash": "deadbeef"}
    assert parse_header("t,s0") == {}


def test_labels_round_trip(tmp_path):
    storage = StorageManager(str(tmp_path))
    labels = np.array([[False, True], [True, True], [False, False]])
    storage.write_labels(np.array([0.0, 0.1, 0.2]), labels)
    times, restored = storage.read_labels()
    np.testing.assert_array_equal(restored, labels)
    assert restored.dtype == bool


def test_reports_round_trip(tmp_path):
    storage = StorageManager(str(tmp_path))
    report = DetectionReport(t=0.5, labels=(0, 1, 0), separation=4.25, attack=True, flagged=frozenset({1}),
                             modes_residual=1e-3, mode_spread=np.array([[0.5, 0.5], [0.9, 0.1], [0.5, 0.5]]),
                             candidates=frozenset({1}), raw_attack=True, step=15)
    storage.write_reports([report, report])
    restored = storage.read_reports()
    assert len(restored) == 2
    assert restored[0].flagged == frozenset({1})
    assert restored[0].step == 15
    np.testing.assert_array_equal(restored[0].mode_spread, report.mode_spread)


def test_metrics_round_trip(tmp_path):
    storage = StorageManager(str(tmp_path))
    metrics = {"latency_samples": None, "attack_window": {"precision": 1.0}, "reports": 3}
    storage.write_metrics(metrics)
    assert storage.read_metrics() == metrics


def test_rewrites_leave_no_temporary_files(tmp_path):
    storage = StorageManager(str(tmp_path))
    for _ in range(3):
        storage.write_stream(TRUE_STREAM, awkward_stream())
    assert os.listdir(tmp_path) == [TRUE_STREAM]


def test_missing_artifact(tmp_path):
    with pytest.raises(MissingArtifact):
        StorageManager(str(tmp_path)).read_stream(TRUE_STREAM)
