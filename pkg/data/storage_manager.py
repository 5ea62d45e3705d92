"""Data storage module for KoopWatch.
Reads and writes run artifacts (streams, labels, reports, metrics, plot tables)
under one output directory. Every file starts with a schema/config-hash header line.
"""

import io
import json
import logging
import os
import tempfile

import numpy as np
import pandas as pd

from core.detector_module import DetectionReport
from core.errors import MissingArtifact
from core.kmd_module import MeasurementFrame, StreamWindow

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

TRUE_STREAM = "true_stream.csv"
RECEIVED_STREAM = "received_stream.csv"
LABELS = "labels.csv"
REPORTS = "reports.jsonl"
METRICS = "metrics.json"


def sensor_columns(p):
    return [f"s{i}" for i in range(p)]


def parse_header(line):
    """Parses '# schema=1 config_hash=...' into a dict; {} when the line is not a header."""
    if not line.startswith("#"):
        return {}
    fields = {}
    for token in line[1:].split():
        key, _, value = token.partition("=")
        fields[key] = value
    return fields


class StorageManager:
    """Manages the artifact files of one run directory."""
    def __init__(self, out_dir, config_hash=""):
        """Initialize the storage manager.
        Args:
            out_dir (str): Directory holding the run artifacts (created on first write).
            config_hash (str): Hash of the scenario the artifacts belong to.
        """
        self.out_dir = out_dir
        self.config_hash = config_hash
        logger.debug("Storage Manager initialized at %s", out_dir)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def exists(self, name):
        return os.path.exists(self.path(name))

    def require(self, name):
        path = self.path(name)
        if not os.path.exists(path):
            raise MissingArtifact(f"{path} does not exist; run the producing command first")
        return path

    @property
    def header(self):
        return f"# schema={SCHEMA_VERSION} config_hash={self.config_hash}\n"

    def _write(self, name, body):
        """Writes header + body to a temp file in the target directory, then renames it into place."""
        os.makedirs(self.out_dir, exist_ok=True)
        target = self.path(name)
        fd, temp_path = tempfile.mkstemp(dir=self.out_dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as f:
                f.write(self.header)
                f.write(body)
            os.replace(temp_path, target)
        except BaseException:
            if os.path.exists(temp_path):
                os.remove(temp_path)
            raise
        logger.debug("Wrote %s", target)
        return target

    def read_header(self, name):
        with open(self.require(name), "r") as f:
            return parse_header(f.readline())

    def _read_lines(self, name):
        with open(self.require(name), "r") as f:
            return [line for line in f.read().splitlines() if line and not line.startswith("#")]

    # Streams and labels

    def write_table(self, name, frame):
        """Writes a DataFrame as CSV; floats use the shortest round-trip representation."""
        return self._write(name, frame.to_csv(index=False, lineterminator="\n"))

    def read_table(self, name):
        return pd.read_csv(self.require(name), comment="#", float_precision="round_trip")

    def write_stream(self, name, stream):
        frame = pd.DataFrame(stream.snapshots, columns=sensor_columns(stream.p))
        frame.insert(0, "t", stream.times)
        return self.write_table(name, frame)

    def read_stream(self, name):
        table = self.read_table(name)
        times = table["t"].to_numpy(dtype=np.float64)
        values = table.drop(columns="t").to_numpy(dtype=np.float64)
        dt = float(times[1] - times[0]) if times.shape[0] > 1 else 1.0
        frames = tuple(MeasurementFrame(float(t), row) for t, row in zip(times, values))
        return StreamWindow(frames, dt)

    def write_labels(self, times, labels):
        frame = pd.DataFrame(labels.astype(int), columns=sensor_columns(labels.shape[1]))
        frame.insert(0, "t", times)
        return self.write_table(LABELS, frame)

    def read_labels(self):
        """Returns (times, boolean labels matrix)."""
        table = self.read_table(LABELS)
        return table["t"].to_numpy(dtype=np.float64), table.drop(columns="t").to_numpy().astype(bool)

    # Reports and metrics

    def write_reports(self, reports):
        buffer = io.StringIO()
        for report in reports:
            buffer.write(json.dumps(report.to_record(), sort_keys=True))
            buffer.write("\n")
        return self._write(REPORTS, buffer.getvalue())

    def read_reports(self):
        return [DetectionReport.from_record(json.loads(line)) for line in self._read_lines(REPORTS)]

    def write_metrics(self, metrics):
        return self._write(METRICS, json.dumps(metrics, sort_keys=True, indent=2) + "\n")

    def read_metrics(self):
        return json.loads("\n".join(self._read_lines(METRICS)))
