import io
import os
import pathlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from core import Direction, NotATransitionError, WaveformRangeError, ConfigError
from core import VDD, LOW_THRESHOLD, MID_THRESHOLD, HIGH_THRESHOLD

CSV_HEADER = "time_s,voltage_v"


# ==================== Sampled waveforms ====================
@dataclass(frozen=True, eq=False)
class SampledWaveform:
    t: np.ndarray
    v: np.ndarray
    vdd: float = VDD
    direction: Direction = Direction.RISING

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        v = np.array(self.v, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise WaveformRangeError("time and voltage must be 1-D arrays of equal length")
        if len(t) < 2:
            raise WaveformRangeError("a waveform needs at least 2 samples, got %d" % len(t))
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise WaveformRangeError("waveform samples must be finite")
        if np.any(np.diff(t) <= 0):
            raise WaveformRangeError("sample times must be strictly increasing")
        if not self.vdd > 0:
            raise ConfigError("vdd must be positive, got %r" % self.vdd)
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "vdd", float(self.vdd))
        object.__setattr__(self, "direction", Direction.parse(self.direction))

    @classmethod
    def from_pairs(cls, pairs, vdd: float = VDD, direction: "Direction | None" = None) -> "SampledWaveform":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls.infer(arr[:, 0], arr[:, 1], vdd, direction)

    @classmethod
    def infer(cls, t, v, vdd: float = VDD, direction: "Direction | None" = None) -> "SampledWaveform":
        """Build a waveform, taking the direction from its end points when not given"""
        if direction is None:
            direction = Direction.RISING if v[-1] >= v[0] else Direction.FALLING
        return cls(t, v, vdd, direction)

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.t.tolist(), self.v.tolist()))

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def sample_at(self, times) -> np.ndarray:
        """Vectorized interpolate(); every time must lie inside the record"""
        times = np.asarray(times, dtype=float)
        if times.size and (times.min() < self.t[0] or times.max() > self.t[-1]):
            raise WaveformRangeError(
                "query [%g, %g] outside waveform span [%g, %g]"
                % (times.min(), times.max(), self.t[0], self.t[-1])
            )
        return np.interp(times, self.t, self.v)

    def shifted(self, delta: float) -> "SampledWaveform":
        return SampledWaveform(self.t + delta, self.v, self.vdd, self.direction)

    def with_direction(self, direction: Direction) -> "SampledWaveform":
        return SampledWaveform(self.t, self.v, self.vdd, direction)

    def __repr__(self):
        return "<SampledWaveform %s, %d samples, [%g, %g] s>" % (
            self.direction.value, len(self.t), self.t[0], self.t[-1])


class RegionKind(Enum):
    NOISELESS = "noiseless"
    NOISY = "noisy"


@dataclass(frozen=True, slots=True)
class CriticalRegion:
    t_first: float
    t_last: float
    kind: RegionKind = RegionKind.NOISY

    def __post_init__(self):
        if not self.t_first < self.t_last:
            raise NotATransitionError(
                "critical region must satisfy t_first < t_last, got [%g, %g]" % (self.t_first, self.t_last))

    @property
    def width(self) -> float:
        return self.t_last - self.t_first

    def contains(self, t: float) -> bool:
        return self.t_first <= t <= self.t_last


# ==================== Queries ====================
def interpolate(wf: SampledWaveform, t: float) -> float:
    if not wf.t[0] <= t <= wf.t[-1]:
        raise WaveformRangeError("t=%g outside waveform span [%g, %g]" % (t, wf.t[0], wf.t[-1]))
    return float(np.interp(t, wf.t, wf.v))


def crossing_times(wf: SampledWaveform, level: float) -> list[float]:
    """
    All times where the piecewise linear waveform passes through a level with a sign change.

    A sample lying exactly on the level counts once; a run of samples on the level
    (flat segment) contributes the time of its first sample. Touching the level
    without changing side is not a crossing.
    """
    if not np.isfinite(level):
        raise ValueError("crossing level must be finite")
    t, v = wf.t, wf.v
    d = v - level
    s = np.sign(d)

    # strict sign changes inside a segment
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    times = t[idx] + (level - v[idx]) * (t[idx + 1] - t[idx]) / (v[idx + 1] - v[idx])
    found = list(zip(idx.tolist(), times.tolist()))

    # samples exactly on the level
    zero = np.nonzero(s == 0)[0]
    if zero.size:
        breaks = np.nonzero(np.diff(zero) > 1)[0]
        starts = np.concatenate(([zero[0]], zero[breaks + 1]))
        ends = np.concatenate((zero[breaks], [zero[-1]]))
        for i, j in zip(starts.tolist(), ends.tolist()):
            if i == 0 or j == len(v) - 1:
                continue
            if s[i - 1] != s[j + 1]:
                found.append((i, float(t[i])))

    found.sort()
    return [x for _, x in found]


def first_crossing(wf: SampledWaveform, level: float) -> float | None:
    c = crossing_times(wf, level)
    return c[0] if c else None


def last_crossing(wf: SampledWaveform, level: float) -> float | None:
    c = crossing_times(wf, level)
    return c[-1] if c else None


def mirror_falling(wf: SampledWaveform) -> SampledWaveform:
    """
    v -> vdd - v, exchanging rising and falling transitions.

    The mirror keeps a reference to its source, and mirroring it again returns that
    source, so a double mirror gives back the original samples exactly.
    """
    source = getattr(wf, "_mirror_source", None)
    if source is not None:
        return source
    out = SampledWaveform(wf.t, wf.vdd - wf.v, wf.vdd, wf.direction.flipped())
    object.__setattr__(out, "_mirror_source", wf)
    return out


def as_rising(wf: SampledWaveform) -> tuple[SampledWaveform, bool]:
    """The rising form of a transition, and whether it had to be mirrored"""
    if wf.direction is Direction.FALLING:
        return mirror_falling(wf), True
    return wf, False


def slew_10_90(wf: SampledWaveform) -> float:
    rising, _ = as_rising(wf)
    lo = first_crossing(rising, LOW_THRESHOLD * wf.vdd)
    hi = last_crossing(rising, HIGH_THRESHOLD * wf.vdd)
    if lo is None or hi is None:
        raise NotATransitionError("waveform does not cross both 10%% and 90%% of vdd (%r)" % wf)
    if hi < lo:
        raise NotATransitionError("last 90%% crossing precedes first 10%% crossing (%r)" % wf)
    return hi - lo


def arrival_time(wf: SampledWaveform) -> float:
    """Latest 0.5*vdd crossing"""
    t = last_crossing(wf, MID_THRESHOLD * wf.vdd)
    if t is None:
        raise NotATransitionError("waveform never crosses 0.5*vdd (%r)" % wf)
    return t


def critical_region(wf: SampledWaveform, kind: RegionKind = RegionKind.NOISY) -> CriticalRegion:
    """First 0.1*vdd to last 0.9*vdd crossing, taken on the rising form"""
    rising, _ = as_rising(wf)
    t_first = first_crossing(rising, LOW_THRESHOLD * wf.vdd)
    t_last = last_crossing(rising, HIGH_THRESHOLD * wf.vdd)
    if t_first is None or t_last is None:
        raise NotATransitionError("waveform has no %s critical region (%r)" % (kind.value, wf))
    return CriticalRegion(t_first, t_last, kind)


def resample_uniform(wf: SampledWaveform, t_start: float, t_end: float, count: int) -> SampledWaveform:
    if not t_start < t_end:
        raise WaveformRangeError("resample window must satisfy t_start < t_end")
    if count < 2:
        raise WaveformRangeError("need at least 2 samples, got %d" % count)
    times = np.linspace(t_start, t_end, count)
    return SampledWaveform(times, wf.sample_at(times), wf.vdd, wf.direction)


def saturated_ramp(start: float, slew: float, t_stop: float, dt: float,
                   vdd: float = VDD, direction: Direction = Direction.RISING,
                   t_begin: float = 0.0) -> SampledWaveform:
    """
    Clean rail to rail ramp on a uniform grid, with the given 10-90% slew.

    @param start: time the ramp leaves the starting rail
    @param slew: 10-90% transition time, the full swing takes slew / 0.8
    @param t_stop: last sample time
    @param dt: grid step
    """
    n = int(round((t_stop - t_begin) / dt))
    times = t_begin + dt * np.arange(n + 1)
    line = LinearWaveform.from_arrival_slew(start + 0.5 * slew / (HIGH_THRESHOLD - LOW_THRESHOLD),
                                            slew, vdd, direction)
    return line.sample(times)


# ==================== Linear waveforms ====================
@dataclass(frozen=True, slots=True)
class LinearWaveform:
    a: float
    b: float
    vdd: float = VDD

    def __post_init__(self):
        if self.a == 0 or not np.isfinite(self.a) or not np.isfinite(self.b):
            raise ConfigError("linear waveform needs a finite non-zero slope, got a=%r b=%r" % (self.a, self.b))
        if not (np.isfinite(self.arrival_time) and np.isfinite(self.slew_10_90)):
            raise ConfigError("linear waveform arrival/slew not finite (a=%r b=%r)" % (self.a, self.b))

    @classmethod
    def from_arrival_slew(cls, arrival: float, slew: float, vdd: float = VDD,
                          direction: Direction = Direction.RISING) -> "LinearWaveform":
        a = (HIGH_THRESHOLD - LOW_THRESHOLD) * vdd / slew
        if direction is Direction.FALLING:
            a = -a
        return cls(a, MID_THRESHOLD * vdd - a * arrival, vdd)

    @property
    def arrival_time(self) -> float:
        return (MID_THRESHOLD * self.vdd - self.b) / self.a

    @property
    def slew_10_90(self) -> float:
        return (HIGH_THRESHOLD - LOW_THRESHOLD) * self.vdd / abs(self.a)

    @property
    def direction(self) -> Direction:
        return Direction.RISING if self.a > 0 else Direction.FALLING

    def value(self, t):
        return self.a * np.asarray(t, dtype=float) + self.b

    def sample(self, times, clip: bool = True) -> SampledWaveform:
        v = self.value(times)
        if clip:
            v = np.clip(v, 0.0, self.vdd)
        return SampledWaveform(times, v, self.vdd, self.direction)

    def shifted(self, delta: float) -> "LinearWaveform":
        return LinearWaveform(self.a, self.b - self.a * delta, self.vdd)

    def mirrored(self) -> "LinearWaveform":
        return LinearWaveform(-self.a, self.vdd - self.b, self.vdd)


# ==================== CSV ====================
def write_csv(wf: SampledWaveform) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for t, v in zip(wf.t.tolist(), wf.v.tolist()):
        buf.write("%s,%s\n" % (repr(t), repr(v)))
    return buf.getvalue()


def read_csv(path: "str | os.PathLike", vdd: float = VDD,
             direction: "Direction | None" = None) -> SampledWaveform:
    path = pathlib.Path(path)
    with path.open("r", encoding="u8") as f:
        header = f.readline().strip()
        if header.replace(" ", "") != CSV_HEADER:
            raise ConfigError("%s: expected header %r, got %r" % (path, CSV_HEADER, header))
        try:
            data = np.loadtxt(f, delimiter=",", ndmin=2)
        except ValueError as e:
            raise ConfigError("%s: %s" % (path, e)) from None
    if data.shape[1] != 2:
        raise ConfigError("%s: expected 2 columns, got %d" % (path, data.shape[1]))
    return SampledWaveform.infer(data[:, 0], data[:, 1], vdd, direction)


if __name__ == "__main__":
    w = SampledWaveform.from_pairs([(0, 0), (0.4e-9, 0.8), (0.6e-9, 0.5), (1e-9, 1.2)])
    print(crossing_times(w, 0.6), slew_10_90(w))
