import functools
import json
import logging
import os
import pathlib
from dataclasses import dataclass

import numpy as np

from core import CharacterizationError, ConfigError, Direction, NotATransitionError
from core import DT, RHO_GRID_POINTS, DERIVATIVE_WINDOW, RECEIVER_LOAD, NS, PS
from core import LOW_THRESHOLD, MID_THRESHOLD, HIGH_THRESHOLD
from oracle import InverterModel, simulate_receiver
from util import smoothed_derivative
from waveform import (SampledWaveform, CriticalRegion, RegionKind, as_rising, critical_region,
                      first_crossing, last_crossing, saturated_ramp, slew_10_90)

logger = logging.getLogger(__name__)

# dv_in/dt below this fraction of its peak is treated as flat
FLAT_SLOPE_FRACTION = 1e-3
# quiet time before the characterization ramp, and settling time per receiver stage
RAMP_LEAD = 100 * PS
SETTLE_PER_STAGE = 0.5 * NS
MIN_GRID_POINTS = 64


@dataclass(frozen=True, eq=False)
class SensitivityProfile:
    t: np.ndarray
    rho: np.ndarray
    drho_dv: np.ndarray | None = None

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        rho = np.array(self.rho, dtype=float)
        if t.shape != rho.shape or t.ndim != 1:
            raise ConfigError("sensitivity times and values must be 1-D arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("sensitivity sample times must be strictly increasing")
        if not np.all(np.isfinite(rho)):
            raise ConfigError("sensitivity values must be finite")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "rho", rho)
        if self.drho_dv is not None:
            object.__setattr__(self, "drho_dv", np.array(self.drho_dv, dtype=float))

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.t.tolist(), self.rho.tolist()))

    def at(self, times) -> np.ndarray:
        """rho at arbitrary times, 0 outside the sampled span"""
        return np.interp(times, self.t, self.rho, left=0.0, right=0.0)


@dataclass(frozen=True, eq=False)
class NoiselessCharacterization:
    """
    Noiseless response of a receiver at one input slew and load.

    rho_t is |dv_out/dt| / |dv_in/dt| on the input sample times, zero outside the input's
    critical region. The voltage table (levels, rho_v, drho_dv) is indexed by the input
    level on the rising form of the transition. polarity is +1 when the output moves in
    the same direction as the input, -1 otherwise.
    """
    v_in_ref: SampledWaveform
    v_out_ref: SampledWaveform
    rho_t: SensitivityProfile
    levels: np.ndarray
    rho_v: np.ndarray
    drho_dv: np.ndarray
    region: CriticalRegion
    delta: float
    overlap: bool
    polarity: int
    source: str = "ramp"            # ramp | victim | waveforms
    input_slew: float | None = None
    load: float | None = None
    shift: float = 0.0              # output shift applied by aligned()

    @property
    def vdd(self) -> float:
        return self.v_in_ref.vdd

    @property
    def direction(self) -> Direction:
        return self.v_in_ref.direction

    @property
    def aligned_applied(self) -> bool:
        return self.shift != 0.0

    @property
    def fixed_frame(self) -> bool:
        """Taken on given waveforms, so its times are those of the circuit they came from"""
        return self.source != "ramp"

    def to_dict(self) -> dict:
        return {
            "vdd_v": self.vdd,
            "direction": self.direction.value,
            "polarity": self.polarity,
            "delta_s": self.delta,
            "overlap": self.overlap,
            "shift_s": self.shift,
            "source": self.source,
            "input_slew_s": self.input_slew,
            "load_f": self.load,
            "region": {"t_first_s": self.region.t_first, "t_last_s": self.region.t_last},
            "levels_v": self.levels.tolist(),
            "rho_v": self.rho_v.tolist(),
            "drho_dv": self.drho_dv.tolist(),
            "rho_t": {"t_s": self.rho_t.t.tolist(), "rho": self.rho_t.rho.tolist()},
            "v_in_ref": {"t_s": self.v_in_ref.t.tolist(), "v": self.v_in_ref.v.tolist()},
            "v_out_ref": {"t_s": self.v_out_ref.t.tolist(), "v": self.v_out_ref.v.tolist()},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NoiselessCharacterization":
        try:
            vdd = float(obj["vdd_v"])
            direction = Direction.parse(obj["direction"])
            v_in = SampledWaveform(obj["v_in_ref"]["t_s"], obj["v_in_ref"]["v"], vdd, direction)
            v_out = SampledWaveform.infer(obj["v_out_ref"]["t_s"], obj["v_out_ref"]["v"], vdd)
            levels = np.array(obj["levels_v"], dtype=float)
            rho_v = np.array(obj["rho_v"], dtype=float)
            drho = np.array(obj["drho_dv"], dtype=float)
            region = CriticalRegion(float(obj["region"]["t_first_s"]), float(obj["region"]["t_last_s"]),
                                    RegionKind.NOISELESS)
            rho_t = SensitivityProfile(obj["rho_t"]["t_s"], obj["rho_t"]["rho"])
            ch = cls(v_in, v_out, rho_t, levels, rho_v, drho, region,
                     float(obj["delta_s"]), bool(obj["overlap"]), int(obj["polarity"]),
                     str(obj.get("source", "ramp")), obj.get("input_slew_s"), obj.get("load_f"),
                     float(obj.get("shift_s", 0.0)))
        except (KeyError, TypeError) as e:
            raise ConfigError("malformed characterization: missing or bad field %s" % e) from None
        _check_table(ch.levels, ch.rho_v, ch.drho_dv)
        return ch


def _check_table(levels: np.ndarray, rho_v: np.ndarray, drho_dv: np.ndarray):
    if levels.ndim != 1 or len(levels) < MIN_GRID_POINTS:
        raise ConfigError("voltage grid needs at least %d points" % MIN_GRID_POINTS)
    if rho_v.shape != levels.shape or drho_dv.shape != levels.shape:
        raise ConfigError("rho table shape does not match its voltage grid")
    if not (np.all(np.isfinite(rho_v)) and np.all(np.isfinite(drho_dv))):
        raise ConfigError("rho table values must be finite")
    if np.any(rho_v < 0):
        raise ConfigError("rho table values must be non-negative")
    steps = np.diff(levels)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ConfigError("voltage grid must be uniform and increasing")


# ==================== Building ====================
def _level_times(rising: SampledWaveform, region: CriticalRegion, levels: np.ndarray) -> np.ndarray:
    """Time at which the rising input first reaches each level inside the region"""
    inside = (rising.t >= region.t_first) & (rising.t <= region.t_last)
    t_in = np.concatenate(([region.t_first], rising.t[inside], [region.t_last]))
    t_in, v_in = _dedupe(t_in, rising.sample_at(t_in))
    if np.all(np.diff(v_in) > 0):
        return np.interp(levels, v_in, t_in)
    # not monotone inside the region, search level by level
    sub = SampledWaveform(t_in, v_in, rising.vdd, Direction.RISING)
    out = np.empty(len(levels))
    for i, lv in enumerate(levels):
        t = first_crossing(sub, lv)
        out[i] = t if t is not None else (region.t_first if lv <= v_in[0] else region.t_last)
    return out


def _dedupe(t, v):
    keep = np.concatenate(([True], np.diff(t) > 0))
    return t[keep], v[keep]


def build_characterization(v_in: SampledWaveform, v_out: SampledWaveform, *,
                           window: int = DERIVATIVE_WINDOW, grid_points: int = RHO_GRID_POINTS,
                           source: str = "waveforms", input_slew: float | None = None,
                           load: float | None = None) -> NoiselessCharacterization:
    """
    Characterize a gate from a noiseless input and the output it produced.

    @param v_in: noiseless input transition
    @param v_out: resulting output, resampled onto v_in's times if needed
    @param window: derivative smoothing window in samples
    @param grid_points: points of the uniform voltage table over [0.1, 0.9]*vdd
    """
    if grid_points < MIN_GRID_POINTS:
        raise ConfigError("rho grid needs at least %d points, got %d" % (MIN_GRID_POINTS, grid_points))
    vdd = v_in.vdd
    t_out50 = last_crossing(v_out, MID_THRESHOLD * vdd)
    if t_out50 is None:
        raise CharacterizationError("gate output never crosses 0.5*vdd, receiver does not switch")
    try:
        rising, _ = as_rising(v_in)
        region = critical_region(v_in, RegionKind.NOISELESS)
        t_in50 = last_crossing(v_in, MID_THRESHOLD * vdd)
    except NotATransitionError as e:
        raise CharacterizationError("noiseless input is not a full transition: %s" % e) from None

    t = v_in.t
    if v_out.t.shape != t.shape or not np.array_equal(v_out.t, t):
        out_v = np.interp(t, v_out.t, v_out.v)
    else:
        out_v = v_out.v

    d_in = smoothed_derivative(t, v_in.v, window)
    d_out = smoothed_derivative(t, out_v, window)
    mag_in = np.abs(d_in)
    flat = mag_in <= FLAT_SLOPE_FRACTION * mag_in.max()
    raw = np.zeros_like(mag_in)
    np.divide(np.abs(d_out), mag_in, out=raw, where=~flat)

    inside = (t >= region.t_first) & (t <= region.t_last)
    rho_t = SensitivityProfile(t, np.where(inside, raw, 0.0))

    levels = np.linspace(LOW_THRESHOLD * vdd, HIGH_THRESHOLD * vdd, grid_points)
    rho_v = np.interp(_level_times(rising, region, levels), t, raw)
    drho_dv = np.gradient(rho_v, levels)

    out_dir = Direction.RISING if out_v[-1] >= out_v[0] else Direction.FALLING
    polarity = 1 if out_dir is v_in.direction else -1

    ch = NoiselessCharacterization(
        v_in_ref=v_in,
        v_out_ref=v_out,
        rho_t=rho_t,
        levels=levels,
        rho_v=rho_v,
        drho_dv=drho_dv,
        region=region,
        delta=t_out50 - t_in50,
        overlap=region.contains(t_out50),
        polarity=polarity,
        source=source,
        input_slew=input_slew,
        load=load,
    )
    logger.debug("characterized (%s): delta=%.4g s, overlap=%s, peak rho=%.4g",
                 source, ch.delta, ch.overlap, float(rho_v.max()))
    return ch


@functools.lru_cache(maxsize=64)
def characterize_noiseless(receiver: InverterModel, input_slew: float, load: float = RECEIVER_LOAD,
                           direction: Direction = Direction.RISING, dt: float = DT) -> NoiselessCharacterization:
    """
    Simulate the receiver alone with a clean saturated ramp and characterize it.

    Results are cached per (receiver, slew, load, direction, dt).
    """
    if not input_slew > 0:
        raise ConfigError("input slew must be positive")
    full = input_slew / (HIGH_THRESHOLD - LOW_THRESHOLD)
    t_stop = RAMP_LEAD + full + SETTLE_PER_STAGE * receiver.stages
    v_in = saturated_ramp(RAMP_LEAD, input_slew, t_stop, dt, receiver.vdd, Direction.parse(direction))
    v_out = simulate_receiver(receiver, v_in, load)[-1]
    return build_characterization(v_in, v_out, source="ramp", input_slew=input_slew, load=load)


def characterize_waveform(receiver: InverterModel, v_in_ref: SampledWaveform, load: float = RECEIVER_LOAD,
                          source: str = "victim") -> NoiselessCharacterization:
    """Characterize the receiver on a given noiseless input, e.g. the uncoupled victim far end"""
    v_out = simulate_receiver(receiver, v_in_ref, load)[-1]
    slew = None
    try:
        slew = slew_10_90(v_in_ref)
    except NotATransitionError:
        pass
    return build_characterization(v_in_ref, v_out, source=source, input_slew=slew, load=load)


def aligned(ch: NoiselessCharacterization) -> NoiselessCharacterization:
    """
    Re-characterize with the output moved back in time by delta, so both 0.5*vdd
    crossings coincide. The returned characterization records the shift.
    """
    if ch.aligned_applied:
        return ch
    t = ch.v_in_ref.t
    out_v = np.interp(t + ch.delta, ch.v_out_ref.t, ch.v_out_ref.v)
    v_out = SampledWaveform(t, out_v, ch.vdd, ch.v_out_ref.direction)
    res = build_characterization(ch.v_in_ref, v_out, window=DERIVATIVE_WINDOW, grid_points=len(ch.levels),
                                 source=ch.source, input_slew=ch.input_slew, load=ch.load)
    return NoiselessCharacterization(
        res.v_in_ref, res.v_out_ref, res.rho_t, res.levels, res.rho_v, res.drho_dv, res.region,
        res.delta, res.overlap, res.polarity, res.source, res.input_slew, res.load, shift=ch.delta,
    )


def effective(ch: NoiselessCharacterization) -> NoiselessCharacterization:
    """The characterization the fitters use: aligned when input and output do not overlap"""
    return ch if ch.overlap else aligned(ch)


# ==================== Queries ====================
def rho_at_voltage(ch: NoiselessCharacterization, v: float) -> tuple[float, float]:
    """
    (rho, drho/dv) at an input level on the rising form of the transition.

    Outside [0.1, 0.9]*vdd both are 0.
    """
    if not (np.isfinite(v) and ch.levels[0] <= v <= ch.levels[-1]):
        return 0.0, 0.0
    return float(np.interp(v, ch.levels, ch.rho_v)), float(np.interp(v, ch.levels, ch.drho_dv))


def rho_at_voltages(ch: NoiselessCharacterization, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=float)
    band = np.isfinite(v) & (v >= ch.levels[0]) & (v <= ch.levels[-1])
    vv = np.where(band, v, ch.levels[0])
    rho = np.where(band, np.interp(vv, ch.levels, ch.rho_v), 0.0)
    drho = np.where(band, np.interp(vv, ch.levels, ch.drho_dv), 0.0)
    return rho, drho


def overlap_test(ch: NoiselessCharacterization) -> bool:
    t_out = last_crossing(ch.v_out_ref, MID_THRESHOLD * ch.vdd)
    return t_out is not None and ch.region.contains(t_out)


# ==================== Files ====================
def dumps(ch: NoiselessCharacterization) -> str:
    return json.dumps(ch.to_dict(), indent=1) + "\n"


def load(path: "str | os.PathLike") -> NoiselessCharacterization:
    path = pathlib.Path(path)
    try:
        with path.open(encoding="u8") as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("%s: not valid JSON (%s)" % (path, e)) from None
    return NoiselessCharacterization.from_dict(obj)


if __name__ == "__main__":
    ch = characterize_noiseless(InverterModel(drive_strength=4), 150 * PS)
    print("delta %.2f ps, overlap %s, peak rho %.3f" % (ch.delta / PS, ch.overlap, ch.rho_v.max()))
