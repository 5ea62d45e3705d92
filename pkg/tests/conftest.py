import json

import pytest

from core.kmd_module import StreamWindow
from helpers import SMALL_NETWORK, rotation, trajectory


@pytest.fixture
def rotation_window():
    return StreamWindow.from_array(trajectory(rotation(0.1), [1.0, 0.0], 11), dt=1.0 / 30.0)


@pytest.fixture
def write_scenario(tmp_path):
    """Writes a scenario document to a temp file and returns its path."""
    def write(document, name="scenario.json"):
        path = tmp_path / name
        path.write_text(json.dumps(document))
        return str(path)
    return write


@pytest.fixture
def small_scenario(write_scenario):
    """4-bus ring, 6 s at 20 Hz, step bias on two angle sensors from t = 4 s."""
    return write_scenario({
        "network": SMALL_NETWORK,
        "simulation": {"T": 6.0, "dt": 0.05},
        "detector": {"n": 40, "n_tilde": 6},
        "attacks": [{"kind": "step", "targets": [1, 2], "t_start": 4.0, "t_end": 6.0, "params": {"magnitude": 0.05}}],
    }, name="small.json")


@pytest.fixture
def quiet_scenario(write_scenario):
    """The small network with zero injections: an exactly flat stream, no events and no attacks."""
    return write_scenario({
        "network": dict(SMALL_NETWORK, injection=[0.0, 0.0, 0.0, 0.0]),
        "simulation": {"T": 6.0, "dt": 0.05},
        "detector": {"n": 40, "n_tilde": 6},
    }, name="quiet.json")
