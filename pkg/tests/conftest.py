import json

import numpy as np
import pytest

from core import Direction, FF, PS, RECEIVER_LOAD
from characterize import build_characterization, characterize_noiseless
from oracle import InverterModel
from waveform import SampledWaveform, saturated_ramp

VDD = 1.2

# Clean rising ramp used across the fitter tests: leaves 0 V at 200 ps, 10-90% slew
# 160 ps, so the 10/50/90% crossings fall on 220/300/380 ps and it reaches vdd at 400 ps.
RAMP_START = 200 * PS
RAMP_SLEW = 160 * PS
RAMP_T50 = 300 * PS
RAMP_T10 = 220 * PS
RAMP_T90 = 380 * PS


def with_noise(wf: SampledWaveform, noise) -> SampledWaveform:
    return SampledWaveform(wf.t, wf.v + noise(wf.t), wf.vdd, wf.direction)


def triangle(center: float, half_width: float, height: float):
    """Compact triangular bump, exactly zero outside center +- half_width"""
    def f(t):
        return height * np.clip(1 - np.abs(t - center) / half_width, 0.0, 1.0)
    return f


@pytest.fixture(scope="session")
def ramp() -> SampledWaveform:
    return saturated_ramp(RAMP_START, RAMP_SLEW, 800 * PS, 1 * PS, VDD)


@pytest.fixture(scope="session")
def falling_ramp() -> SampledWaveform:
    return saturated_ramp(RAMP_START, RAMP_SLEW, 800 * PS, 1 * PS, VDD, Direction.FALLING)


@pytest.fixture(scope="session")
def crossing_wf() -> SampledWaveform:
    """Re-crossing input: passes 0.6 V at 0.3, 0.5333 and 0.6571 ns"""
    return SampledWaveform.from_pairs([(0, 0), (0.4e-9, 0.8), (0.6e-9, 0.5), (1e-9, 1.2)], VDD)


@pytest.fixture(scope="session")
def buffer_ch(ramp):
    """Unit-gain buffer: output identical to the input"""
    return build_characterization(ramp, ramp)


@pytest.fixture(scope="session")
def power_ch(ramp):
    """Smooth nonlinear gate, v_out = vdd * (v_in / vdd) ** 1.5, so rho varies with the input level"""
    out = SampledWaveform(ramp.t, VDD * (ramp.v / VDD) ** 1.5, VDD, Direction.RISING)
    return build_characterization(ramp, out)


@pytest.fixture(scope="session")
def inverter_ch():
    return characterize_noiseless(InverterModel(drive_strength=4), 150 * PS, RECEIVER_LOAD)


@pytest.fixture(scope="session")
def four_stage_ch():
    """Slow 4-stage receiver whose output transition starts after the input's"""
    model = InverterModel(drive_strength=1, stages=4, c_out_per_stage=40 * FF)
    return characterize_noiseless(model, RAMP_SLEW, RECEIVER_LOAD, Direction.RISING, 0.5 * PS)


TINY_EXPERIMENT = {
    "name": "tiny",
    "vdd_v": VDD,
    "lines": [
        {"id": "x", "length_um": 20, "segments": 2, "r_seg_ohm": 8.5, "c_seg_ff": 4.8},
        {"id": "y", "length_um": 20, "segments": 2, "r_seg_ohm": 8.5, "c_seg_ff": 4.8},
    ],
    "couplings": [{"a": "x", "b": "y", "total_ff": 5}],
    "drivers": [{"line": "x", "r_ohm": 100}, {"line": "y", "r_ohm": 100}],
    "victim": "y",
    "receiver": {"drive_strength": 4, "stages": 1, "load_ff": 10},
    "sim": {"dt_ps": 0.5, "tstop_ps": 1200},
    "stimuli": {
        "victim": {"start_ps": 300, "slew_ps": 150, "direction": "rising"},
        "aggressors": [{"line": "x", "slew_ps": 150}],
    },
    "sweep": {"count": 3, "window_ps": 200, "center_ps": 0, "methods": "all"},
}


@pytest.fixture
def tiny_experiment(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_EXPERIMENT), encoding="u8")
    return path
