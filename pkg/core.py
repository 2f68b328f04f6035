from enum import Enum
import io
import json
import logging
import pathlib

logger = logging.getLogger(__name__)

# ==================== Constants Definition ====================
# Unit conversions, human-facing units -> SI
PS = 1e-12
NS = 1e-9
FF = 1e-15
UM = 1e-6
MA = 1e-3
UV = 1e-6

# Transition thresholds, as fractions of vdd
LOW_THRESHOLD = 0.1
MID_THRESHOLD = 0.5
HIGH_THRESHOLD = 0.9

# User defined constants
_DEFAULT_CONFIG = {
    "vdd_v": 1.2,
    "dt_ps": 0.1,
    "sample_count": 35,
    "sgdp_objective": "squared",
    "gauss_newton_max_iters": 50,
    "param_tol": 1e-9,
    "grid_fallback": True,
    "rho_grid_points": 256,
    "derivative_window": 5,
    "newton_tol_uv": 1.0,
    "newton_max_iters": 20,
    "vth_v": 0.36,
    "alpha": 1.3,
    "i_on_ma": 0.55,
    "c_out_ff": 5.0,
    "c_in_ff": 2.0,
    "v_dsat_v": 0.42,
    "receiver_load_ff": 10.0,
    "driver_r_ohm": 100.0,
    "um_per_segment": 10.0,
    "r_seg_ohm": 8.5,
    "c_seg_ff": 4.8,
}

config_path = pathlib.Path(__file__).parent.absolute() / "config.json"
if not config_path.exists():
    with config_path.open("w", encoding="u8") as f:
        json.dump(_DEFAULT_CONFIG, f, indent=4)

with config_path.open(encoding="u8") as f:
    obj = json.load(f)

for _key in obj:
    if _key not in _DEFAULT_CONFIG:
        logger.warning("ignoring unknown key %r in %s", _key, config_path)

CONFIG = {**_DEFAULT_CONFIG, **{k: v for k, v in obj.items() if k in _DEFAULT_CONFIG}}

VDD = float(CONFIG["vdd_v"])
DT = CONFIG["dt_ps"] * PS                       # transient step
SAMPLE_COUNT = int(CONFIG["sample_count"])      # P, sampling points per fit
SGDP_OBJECTIVE = CONFIG["sgdp_objective"]
GAUSS_NEWTON_MAX_ITERS = int(CONFIG["gauss_newton_max_iters"])
PARAM_TOL = float(CONFIG["param_tol"])
GRID_FALLBACK = bool(CONFIG["grid_fallback"])
RHO_GRID_POINTS = int(CONFIG["rho_grid_points"])
DERIVATIVE_WINDOW = int(CONFIG["derivative_window"])
NEWTON_TOL = CONFIG["newton_tol_uv"] * UV
NEWTON_MAX_ITERS = int(CONFIG["newton_max_iters"])

# Inverter model defaults, chosen to give gate delays of tens of ps at 150 ps input slew.
# These are model parameters of the built-in receiver, not measured cell data.
VTH = float(CONFIG["vth_v"])
ALPHA = float(CONFIG["alpha"])
I_ON = CONFIG["i_on_ma"] * MA                   # per unit drive
C_OUT = CONFIG["c_out_ff"] * FF                 # per stage
C_IN = CONFIG["c_in_ff"] * FF                   # per unit drive
V_DSAT = float(CONFIG["v_dsat_v"])              # at full gate drive
RECEIVER_LOAD = CONFIG["receiver_load_ff"] * FF

# Interconnect defaults: 8.5 ohm / 4.8 fF per 10 um ladder segment
DRIVER_R = float(CONFIG["driver_r_ohm"])
UM_PER_SEGMENT = float(CONFIG["um_per_segment"])
R_SEG = float(CONFIG["r_seg_ohm"])
C_SEG = CONFIG["c_seg_ff"] * FF


def resolved_defaults() -> dict:
    """All defaults in effect, human-facing units, as written to config.json"""
    return dict(CONFIG)


# ==================== Errors ====================
class NoisyStaError(Exception):
    pass


class WaveformRangeError(NoisyStaError, ValueError):
    pass


class NotATransitionError(NoisyStaError, ValueError):
    pass


class ConfigError(NoisyStaError, ValueError):
    pass


class SimulationDivergedError(NoisyStaError, RuntimeError):
    pass


class CharacterizationError(NoisyStaError, RuntimeError):
    pass


class FitError(NoisyStaError, RuntimeError):
    pass


class DegenerateAreaError(FitError):
    pass


class DegenerateWeightsError(FitError):
    pass


# ==================== Direction Enum ====================
class Direction(Enum):
    RISING = "rising"
    FALLING = "falling"

    def flipped(self) -> "Direction":
        return Direction.FALLING if self is Direction.RISING else Direction.RISING

    @classmethod
    def parse(cls, text: "str | Direction") -> "Direction":
        if isinstance(text, Direction):
            return text
        try:
            return cls(str(text).lower())
        except ValueError:
            raise ConfigError("direction must be 'rising' or 'falling', got %r" % text) from None


# ==================== Fitting methods ====================
class Method(Enum):
    P1 = "P1"
    P2 = "P2"
    LSF3 = "LSF3"
    E4 = "E4"
    WLS5 = "WLS5"
    SGDP = "SGDP"

    @classmethod
    def parse(cls, text: "str | Method") -> "Method":
        if isinstance(text, Method):
            return text
        try:
            return cls(str(text).upper())
        except ValueError:
            raise ConfigError("unknown method %r, expected one of %s"
                              % (text, ", ".join(m.value.lower() for m in cls))) from None


class ReportWriter:
    def __init__(self, echo=None):
        """
        Line buffer for human readable reports.

        @param echo: optional stream every line is also printed to
        """
        self.buf = io.StringIO()
        self.echo = echo

    def dump(self, file) -> None:
        lines = self.buf.getvalue().splitlines()
        for line in lines:
            print(line, file=file)

    def getvalue(self) -> str:
        return self.buf.getvalue()

    def writeln(self, *args, **kw):
        if self.echo is not None:
            print(*args, **kw, file=self.echo)
        print(*args, **kw, file=self.buf)

    def writeln_no_echo(self, *args, **kw):
        print(*args, **kw, file=self.buf)


if __name__ == "__main__":
    print(json.dumps(resolved_defaults(), indent=4))
