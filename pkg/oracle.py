"""
Transient reference simulator for coupled RC interconnect driving an inverter receiver.

Lines are discretized into pi-sections and integrated with the trapezoidal rule at a
fixed step. The receiver loads the victim far end with a constant gate capacitance and
its stages are integrated in sequence, each solved by a scalar Newton iteration per step.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import brentq

from core import ConfigError, NotATransitionError, SimulationDivergedError, Direction
from core import VDD, DT, VTH, ALPHA, I_ON, C_OUT, C_IN, V_DSAT, RECEIVER_LOAD, DRIVER_R
from core import NEWTON_TOL, NEWTON_MAX_ITERS, PS, FF, MA
from core import UM_PER_SEGMENT, R_SEG, C_SEG
from core import MID_THRESHOLD, HIGH_THRESHOLD, LOW_THRESHOLD
from waveform import SampledWaveform, last_crossing

logger = logging.getLogger(__name__)

# Source rows are precomputed in blocks of this many steps
CHUNK_STEPS = 4096
# Newton substeps tried before giving up on a step
SUBSTEPS = (1, 2, 4)

RECEIVER_PREFIX = "rx"
DRIVER_PREFIX = "drv"


# ==================== Circuit description ====================
@dataclass(frozen=True, slots=True)
class LineSpec:
    id: str
    length_um: float
    r_per_um: float         # ohm / um
    c_per_um: float         # F / um
    segments: int
    far_end_load: float = 0.0   # F, lumped at the far end

    def __post_init__(self):
        if not self.id or ":" in self.id:
            raise ConfigError("line id must be a non-empty string without ':', got %r" % self.id)
        if not self.length_um > 0:
            raise ConfigError("line %s: length must be positive" % self.id)
        if int(self.segments) != self.segments or self.segments < 1:
            raise ConfigError("line %s: segments must be an integer >= 1" % self.id)
        if self.r_per_um < 0 or self.c_per_um < 0 or self.far_end_load < 0:
            raise ConfigError("line %s: r, c and load must be non-negative" % self.id)

    @classmethod
    def per_segment(cls, id: str, length_um: float, segments: int, r_seg: float, c_seg: float,
                    far_end_load: float = 0.0) -> "LineSpec":
        """Line from per-segment ladder values (ohm, F)"""
        return cls(id, length_um, r_seg * segments / length_um, c_seg * segments / length_um,
                   segments, far_end_load)

    @classmethod
    def totals(cls, id: str, length_um: float, segments: int, r_total: float, c_total: float,
               far_end_load: float = 0.0) -> "LineSpec":
        return cls(id, length_um, r_total / length_um, c_total / length_um, segments, far_end_load)

    @property
    def r_segment(self) -> float:
        return self.r_per_um * self.length_um / self.segments

    @property
    def c_segment(self) -> float:
        return self.c_per_um * self.length_um / self.segments

    @property
    def r_total(self) -> float:
        return self.r_per_um * self.length_um

    @property
    def c_total(self) -> float:
        return self.c_per_um * self.length_um

    @property
    def far_end(self) -> str:
        return node_id(self.id, self.segments)


@dataclass(frozen=True, slots=True)
class CouplingSpec:
    line_a: str
    line_b: str
    total_c: float

    def __post_init__(self):
        if self.line_a == self.line_b:
            raise ConfigError("coupling must join two different lines, got %s twice" % self.line_a)
        if self.total_c < 0:
            raise ConfigError("coupling %s-%s: total_c must be >= 0" % (self.line_a, self.line_b))


@dataclass(frozen=True, slots=True)
class InverterModel:
    vdd: float = VDD
    vth_n: float = VTH
    vth_p: float = VTH
    alpha: float = ALPHA
    i_on_n: float = I_ON
    i_on_p: float = I_ON
    drive_strength: float = 1.0
    stages: int = 1
    c_out_per_stage: float = C_OUT
    c_in: float = C_IN          # gate capacitance per unit drive
    v_dsat: float = V_DSAT      # saturation voltage at full gate drive

    def __post_init__(self):
        if not self.vdd > 0:
            raise ConfigError("inverter vdd must be positive")
        if not (0 < self.vth_n < self.vdd and 0 < self.vth_p < self.vdd):
            raise ConfigError("inverter thresholds must lie in (0, vdd)")
        if not 1 <= self.alpha <= 2:
            raise ConfigError("alpha must lie in [1, 2], got %r" % self.alpha)
        if not (self.i_on_n > 0 and self.i_on_p > 0):
            raise ConfigError("on currents must be positive")
        if not self.drive_strength > 0:
            raise ConfigError("drive strength must be positive")
        if int(self.stages) != self.stages or self.stages < 1:
            raise ConfigError("stages must be an integer >= 1")
        if self.c_out_per_stage < 0 or self.c_in < 0 or not self.v_dsat > 0:
            raise ConfigError("capacitances must be >= 0 and v_dsat > 0")

    @property
    def input_capacitance(self) -> float:
        return self.c_in * self.drive_strength

    @property
    def polarity(self) -> int:
        """+1 if the output moves with the input, -1 if against"""
        return -1 if self.stages % 2 else 1

    def stage_capacitances(self, load: float) -> list[float]:
        """Total capacitance on each stage output: own diffusion plus the next gate, or the load"""
        caps = [self.c_out_per_stage + self.input_capacitance] * (self.stages - 1)
        caps.append(self.c_out_per_stage + load)
        return caps

    def single_stage(self) -> "InverterModel":
        return InverterModel(self.vdd, self.vth_n, self.vth_p, self.alpha, self.i_on_n, self.i_on_p,
                             self.drive_strength, 1, self.c_out_per_stage, self.c_in, self.v_dsat)


@dataclass(frozen=True, slots=True)
class Stimulus:
    source: str             # driven line id
    start_time: float
    slew_10_90: float
    direction: Direction = Direction.RISING
    swing: float | None = None      # defaults to the circuit vdd

    def __post_init__(self):
        if not self.slew_10_90 > 0:
            raise ConfigError("stimulus on %s: slew must be positive" % self.source)
        object.__setattr__(self, "direction", Direction.parse(self.direction))

    @property
    def duration(self) -> float:
        """Rail to rail ramp time"""
        return self.slew_10_90 / (HIGH_THRESHOLD - LOW_THRESHOLD)

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def shifted(self, delta: float) -> "Stimulus":
        return Stimulus(self.source, self.start_time + delta, self.slew_10_90, self.direction, self.swing)

    def initial_level(self, vdd: float) -> float:
        return 0.0 if self.direction is Direction.RISING else vdd

    def values(self, times: np.ndarray, vdd: float) -> np.ndarray:
        swing = vdd if self.swing is None else self.swing
        frac = np.clip((times - self.start_time) / self.duration, 0.0, 1.0)
        if self.direction is Direction.RISING:
            return swing * frac
        return vdd - swing * frac


@dataclass(frozen=True)
class CircuitConfig:
    lines: tuple[LineSpec, ...]
    couplings: tuple[CouplingSpec, ...]
    drivers: dict                       # line id -> source resistance, 0 means ideal
    receiver: InverterModel | None
    victim: str
    dt: float = DT
    t_stop: float = 3000 * PS
    observed: tuple[str, ...] = ()
    receiver_load: float = RECEIVER_LOAD
    vdd: float = VDD
    static_levels: dict = field(default_factory=dict)   # line id -> volts for undriven stimuli

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        object.__setattr__(self, "observed", tuple(self.observed))
        ids = [line.id for line in self.lines]
        if not ids:
            raise ConfigError("circuit has no lines")
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate line ids in %s" % ids)
        if self.victim not in ids:
            raise ConfigError("victim %r is not a line" % self.victim)
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.t_stop > self.dt:
            raise ConfigError("t_stop must exceed dt")
        if not self.vdd > 0:
            raise ConfigError("vdd must be positive")
        for c in self.couplings:
            for lid in (c.line_a, c.line_b):
                if lid not in ids:
                    raise ConfigError("coupling refers to unknown line %r" % lid)
        for lid, r in self.drivers.items():
            if lid not in ids:
                raise ConfigError("driver on unknown line %r" % lid)
            if r < 0:
                raise ConfigError("driver resistance of %s must be >= 0" % lid)
        for lid in ids:
            if lid not in self.drivers:
                raise ConfigError("line %r has no driver" % lid)
        if self.receiver is not None and self.receiver_load < 0:
            raise ConfigError("receiver load must be >= 0")

    def line(self, line_id: str) -> LineSpec:
        for line in self.lines:
            if line.id == line_id:
                return line
        raise ConfigError("unknown line %r" % line_id)

    @property
    def victim_far_end(self) -> str:
        return self.line(self.victim).far_end

    def replace(self, **kw) -> "CircuitConfig":
        fields = dict(lines=self.lines, couplings=self.couplings, drivers=dict(self.drivers),
                      receiver=self.receiver, victim=self.victim, dt=self.dt, t_stop=self.t_stop,
                      observed=self.observed, receiver_load=self.receiver_load, vdd=self.vdd,
                      static_levels=dict(self.static_levels))
        fields.update(kw)
        return CircuitConfig(**fields)


def node_id(line_id: str, k: int) -> str:
    return "%s:%d" % (line_id, k)


def receiver_node(stage: int) -> str:
    return "%s:%d" % (RECEIVER_PREFIX, stage)


RECEIVER_OUTPUT = "%s:out" % RECEIVER_PREFIX


# ==================== MNA assembly ====================
class Circuit:
    """
    Assembled node system of a CircuitConfig.

    Nodes are partitioned into free nodes (unknowns) and forced nodes whose voltage is
    set by a source: the ideal driver node of each line, or the line's near end when the
    driver resistance is 0. With G, C split the same way, the free nodes obey
        C_ff v' + G_ff v = -G_fs s - C_fs s'
    """

    def __init__(self, config: CircuitConfig):
        self.config = config
        self.free: list[str] = []
        self.forced: list[str] = []
        self.forced_line: dict[str, str] = {}   # forced node -> line it drives
        self.segment_coupling: dict[tuple[str, str], float] = {}

        for line in config.lines:
            r_drv = config.drivers[line.id]
            if r_drv == 0:
                self.forced.append(node_id(line.id, 0))
                self.forced_line[node_id(line.id, 0)] = line.id
            else:
                drv = "%s:%s" % (DRIVER_PREFIX, line.id)
                self.forced.append(drv)
                self.forced_line[drv] = line.id
                self.free.append(node_id(line.id, 0))
            for k in range(1, line.segments + 1):
                self.free.append(node_id(line.id, k))

        self.index = {n: ("f", i) for i, n in enumerate(self.free)}
        self.index.update({n: ("s", i) for i, n in enumerate(self.forced)})

        nf, ns = len(self.free), len(self.forced)
        self.G_ff = np.zeros((nf, nf))
        self.G_fs = np.zeros((nf, ns))
        self.C_ff = np.zeros((nf, nf))
        self.C_fs = np.zeros((nf, ns))

        for line in config.lines:
            r_drv = config.drivers[line.id]
            if r_drv > 0:
                self._stamp_conductance("%s:%s" % (DRIVER_PREFIX, line.id), node_id(line.id, 0), 1 / r_drv)
            r_seg, c_seg = line.r_segment, line.c_segment
            for k in range(1, line.segments + 1):
                a, b = node_id(line.id, k - 1), node_id(line.id, k)
                if r_seg > 0:
                    self._stamp_conductance(a, b, 1 / r_seg)
                else:
                    raise ConfigError("line %s: zero segment resistance is not supported" % line.id)
                self._stamp_capacitance(a, None, c_seg / 2)
                self._stamp_capacitance(b, None, c_seg / 2)
            self._stamp_capacitance(line.far_end, None, line.far_end_load)

        for c in config.couplings:
            la, lb = config.line(c.line_a), config.line(c.line_b)
            if la.segments != lb.segments:
                raise ConfigError("coupled lines %s (%d segments) and %s (%d segments) must have "
                                  "matching segment counts" % (la.id, la.segments, lb.id, lb.segments))
            per_pair = c.total_c / la.segments
            key = tuple(sorted((la.id, lb.id)))
            self.segment_coupling[key] = self.segment_coupling.get(key, 0.0) + per_pair
            for k in range(1, la.segments + 1):
                self._stamp_capacitance(node_id(la.id, k - 1), node_id(lb.id, k - 1), per_pair / 2)
                self._stamp_capacitance(node_id(la.id, k), node_id(lb.id, k), per_pair / 2)

        if config.receiver is not None:
            self._stamp_capacitance(config.victim_far_end, None, config.receiver.input_capacitance)

        logger.debug("assembled circuit: %d free nodes, %d forced nodes", nf, ns)

    def _stamp(self, mats, a, b, value):
        ff, fs = mats
        ends = [self.index[a]] + ([self.index[b]] if b is not None else [])
        for k, (kind, i) in enumerate(ends):
            if kind != "f":
                continue
            ff[i, i] += value
            if len(ends) == 1:
                continue
            kind_j, j = ends[1 - k]
            if kind_j == "f":
                ff[i, j] -= value
            else:
                fs[i, j] -= value

    def _stamp_conductance(self, a, b, g):
        self._stamp((self.G_ff, self.G_fs), a, b, g)

    def _stamp_capacitance(self, a, b, c):
        if c == 0:
            return
        if b is None:
            kind, i = self.index[a]
            if kind == "f":
                self.C_ff[i, i] += c
            return
        self._stamp((self.C_ff, self.C_fs), a, b, c)

    def coupling_per_segment(self, line_a: str, line_b: str) -> float:
        return self.segment_coupling.get(tuple(sorted((line_a, line_b))), 0.0)

    def ground_capacitance(self, node: str) -> float:
        """Row sum of C for a free node, i.e. its capacitance to ground"""
        kind, i = self.index[node]
        if kind != "f":
            raise ConfigError("%s is a forced node" % node)
        return float(self.C_ff[i].sum() + self.C_fs[i].sum())

    def forced_values(self, stimuli: list[Stimulus], times: np.ndarray) -> np.ndarray:
        """Voltage of every forced node at every time, shape (forced, len(times))"""
        vdd = self.config.vdd
        by_line = {}
        for s in stimuli:
            if s.source not in self.config.drivers:
                raise ConfigError("stimulus on %r, which is not a driven line" % s.source)
            if s.source in by_line:
                raise ConfigError("two stimuli on line %r" % s.source)
            by_line[s.source] = s
        out = np.empty((len(self.forced), len(times)))
        for i, n in enumerate(self.forced):
            lid = self.forced_line[n]
            if lid in by_line:
                out[i] = by_line[lid].values(times, vdd)
            else:
                out[i] = self.config.static_levels.get(lid, 0.0)
        return out

    def simulate(self, stimuli: list[Stimulus]) -> dict[str, SampledWaveform]:
        return simulate(self, stimuli)


def build_circuit(config: CircuitConfig) -> Circuit:
    return Circuit(config)


# ==================== Inverter model ====================
class _Devices:
    """Alpha-power inverter in plain floats, for the per-step Newton loop"""
    __slots__ = ("vdd", "vth_n", "vth_p", "span_n", "span_p", "isat_n", "isat_p", "v_dsat", "alpha", "half_alpha")

    def __init__(self, model: InverterModel):
        self.vdd = model.vdd
        self.vth_n = model.vth_n
        self.vth_p = model.vth_p
        self.span_n = model.vdd - model.vth_n
        self.span_p = model.vdd - model.vth_p
        self.isat_n = model.i_on_n * model.drive_strength
        self.isat_p = model.i_on_p * model.drive_strength
        self.v_dsat = model.v_dsat
        self.alpha = model.alpha
        self.half_alpha = model.alpha / 2

    def _device(self, vov, span, isat, vds):
        if vov <= 0:
            return 0.0, 0.0
        r = vov / span
        idsat = isat * r ** self.alpha
        vdsat = self.v_dsat * r ** self.half_alpha
        x = vds / vdsat
        if x >= 1:
            return idsat, 0.0
        if x <= -1:
            return -idsat, 0.0
        ax = abs(x)
        return idsat * x * (2 - ax), idsat * (2 - 2 * ax) / vdsat

    def current(self, v_in, v_out):
        """(current into the output node, its derivative with respect to v_out)"""
        i_n, g_n = self._device(v_in - self.vth_n, self.span_n, self.isat_n, v_out)
        i_p, g_p = self._device(self.vdd - v_in - self.vth_p, self.span_p, self.isat_p, self.vdd - v_out)
        return i_p - i_n, -(g_n + g_p)


def receiver_current(v_in: float, v_out: float, model: InverterModel) -> float:
    """
    Current into the inverter output node.

    Each transistor follows the alpha-power law: zero below threshold, a parabolic
    triode region up to v_dsat, then a flat saturation current. The pull-down current
    therefore enters with a negative sign.
    """
    return _Devices(model).current(v_in, v_out)[0]


def dc_output(model: InverterModel, v_in: float) -> float:
    """Static output voltage of one stage for a constant input"""
    dev = _Devices(model)
    lo, hi = -model.vdd, 2 * model.vdd
    f_lo, f_hi = dev.current(v_in, lo)[0], dev.current(v_in, hi)[0]
    if f_lo == 0 and f_hi == 0:
        # both devices off, output floats
        return model.vdd / 2
    return brentq(lambda y: dev.current(v_in, y)[0], lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _trapezoid_step(dev: _Devices, c: float, h: float, x0: float, x1: float, y0: float):
    i0 = dev.current(x0, y0)[0]
    y = y0
    ch = c / h
    for _ in range(NEWTON_MAX_ITERS):
        i1, g1 = dev.current(x1, y)
        f = ch * (y - y0) - 0.5 * (i0 + i1)
        dy = -f / (ch - 0.5 * g1)
        y += dy
        if abs(dy) < NEWTON_TOL:
            return y
    return None


def _advance(dev, c, h, x0, x1, y0, t):
    for parts in SUBSTEPS:
        y = y0
        for j in range(parts):
            xa = x0 + (x1 - x0) * j / parts
            xb = x0 + (x1 - x0) * (j + 1) / parts
            y = _trapezoid_step(dev, c, h / parts, xa, xb, y)
            if y is None:
                break
        else:
            if parts > 1:
                logger.debug("receiver step at t=%g needed %d substeps", t, parts)
            return y
    raise SimulationDivergedError("receiver Newton iteration did not converge at t=%g s" % t)


def _integrate_stage(model: InverterModel, times: np.ndarray, v_in: np.ndarray, c: float) -> np.ndarray:
    if c <= 0:
        raise ConfigError("receiver stage needs a positive output capacitance")
    dev = _Devices(model)
    n = len(times)
    y = np.empty(n)
    y0 = dc_output(model, float(v_in[0]))
    moving = np.nonzero(v_in != v_in[0])[0]
    first = n - 1 if moving.size == 0 else max(int(moving[0]) - 1, 0)
    y[:first + 1] = y0
    tl, xl = times.tolist(), v_in.tolist()
    yv = y0
    for k in range(first, n - 1):
        yv = _advance(dev, c, tl[k + 1] - tl[k], xl[k], xl[k + 1], yv, tl[k + 1])
        y[k + 1] = yv
    return y


def simulate_receiver(model: InverterModel, v_in: SampledWaveform, load: float = RECEIVER_LOAD) -> list[SampledWaveform]:
    """
    Drive the receiver with a sampled input.

    @param load: capacitance on the last stage output
    @return: one waveform per stage output, last entry is the receiver output
    """
    x = np.asarray(v_in.v, dtype=float)
    outputs = []
    for c in model.stage_capacitances(load):
        x = _integrate_stage(model, v_in.t, x, c)
        outputs.append(SampledWaveform.infer(v_in.t, x, model.vdd))
    return outputs


# ==================== Transient simulation ====================
def simulate(circuit: Circuit, stimuli: list[Stimulus]) -> dict[str, SampledWaveform]:
    """
    Trapezoidal transient of the circuit from its DC operating point at t=0.

    @return: waveform for each observed node; the victim far end and receiver output
        are always included
    """
    cfg = circuit.config
    for s in stimuli:
        if not cfg.t_stop > s.end_time:
            raise ConfigError("t_stop=%g must exceed the end of the stimulus on %s (%g)"
                              % (cfg.t_stop, s.source, s.end_time))
    h = cfg.dt
    n_steps = int(round(cfg.t_stop / h))
    times = h * np.arange(n_steps + 1)

    observed = list(dict.fromkeys([cfg.victim_far_end, *cfg.observed]))
    want_rx = cfg.receiver is not None
    line_nodes = []
    for n in observed:
        if n.startswith(RECEIVER_PREFIX + ":"):
            if not want_rx:
                raise ConfigError("node %s requested but the circuit has no receiver" % n)
            continue
        if n not in circuit.index:
            raise ConfigError("unknown node %r" % n)
        line_nodes.append(n)

    s_all = circuit.forced_values(stimuli, times)
    rows = [circuit.index[n] for n in line_nodes]
    history = np.empty((len(rows), n_steps + 1))

    # DC operating point
    v = np.linalg.solve(circuit.G_ff, -circuit.G_fs @ s_all[:, 0]) if circuit.free else np.zeros(0)

    def record(k, v_free, s_col):
        for r, (kind, i) in enumerate(rows):
            history[r, k] = v_free[i] if kind == "f" else s_col[i]

    record(0, v, s_all[:, 0])

    if circuit.free:
        lhs = 2 * circuit.C_ff / h + circuit.G_ff
        lu = lu_factor(lhs)
        P = lu_solve(lu, 2 * circuit.C_ff / h - circuit.G_ff)
        for start in range(0, n_steps, CHUNK_STEPS):
            stop = min(n_steps, start + CHUNK_STEPS)
            s0, s1 = s_all[:, start:stop], s_all[:, start + 1:stop + 1]
            W = -circuit.G_fs @ (s0 + s1) - (2 / h) * circuit.C_fs @ (s1 - s0)
            X = lu_solve(lu, W)
            for j in range(stop - start):
                v = P @ v + X[:, j]
                record(start + j + 1, v, s1[:, j])
    else:
        for k in range(1, n_steps + 1):
            record(k, v, s_all[:, k])

    result = {n: SampledWaveform.infer(times, history[r], cfg.vdd) for r, n in enumerate(line_nodes)}

    if want_rx:
        stages = simulate_receiver(cfg.receiver, result[cfg.victim_far_end], cfg.receiver_load)
        for k, wf in enumerate(stages, start=1):
            result[receiver_node(k)] = wf
        result[RECEIVER_OUTPUT] = stages[-1]

    logger.debug("simulated %d steps of %g s, %d stimuli", n_steps, h, len(stimuli))
    return result


def measure_gate_delay(v_in: SampledWaveform, v_out: SampledWaveform) -> float:
    t_in = last_crossing(v_in, MID_THRESHOLD * v_in.vdd)
    t_out = last_crossing(v_out, MID_THRESHOLD * v_out.vdd)
    if t_in is None or t_out is None:
        raise NotATransitionError("gate delay needs both waveforms to cross 0.5*vdd")
    return t_out - t_in


# ==================== JSON circuit description ====================
def _line_from_dict(obj: dict) -> LineSpec:
    """Per-segment, total or per-um R/C; missing values fall back to the configured ladder"""
    try:
        lid = str(obj["id"])
        length = float(obj["length_um"])
        segments = int(obj.get("segments", round(length / UM_PER_SEGMENT)))
        load = float(obj.get("load_ff", 0)) * FF
        if "r_total_ohm" in obj or "c_total_ff" in obj:
            return LineSpec.totals(lid, length, segments, float(obj.get("r_total_ohm", 0)),
                                   float(obj.get("c_total_ff", 0)) * FF, load)
        if "r_ohm_per_um" in obj or "c_ff_per_um" in obj:
            return LineSpec(lid, length, float(obj.get("r_ohm_per_um", 0)),
                            float(obj.get("c_ff_per_um", 0)) * FF, segments, load)
        return LineSpec.per_segment(lid, length, segments, float(obj.get("r_seg_ohm", R_SEG)),
                                    float(obj.get("c_seg_ff", C_SEG / FF)) * FF, load)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("bad line entry %r: %s" % (obj, e)) from None


def receiver_from_dict(obj: dict, vdd: float = VDD) -> InverterModel:
    known = {"drive_strength", "stages", "load_ff", "vth_n_v", "vth_p_v", "alpha",
             "i_on_n_ma", "i_on_p_ma", "c_out_ff", "c_in_ff", "v_dsat_v"}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError("unknown receiver keys: %s" % ", ".join(sorted(unknown)))
    return InverterModel(
        vdd=vdd,
        vth_n=float(obj.get("vth_n_v", VTH)),
        vth_p=float(obj.get("vth_p_v", VTH)),
        alpha=float(obj.get("alpha", ALPHA)),
        i_on_n=float(obj.get("i_on_n_ma", I_ON / MA)) * MA,
        i_on_p=float(obj.get("i_on_p_ma", I_ON / MA)) * MA,
        drive_strength=float(obj.get("drive_strength", 1)),
        stages=int(obj.get("stages", 1)),
        c_out_per_stage=float(obj.get("c_out_ff", C_OUT / FF)) * FF,
        c_in=float(obj.get("c_in_ff", C_IN / FF)) * FF,
        v_dsat=float(obj.get("v_dsat_v", V_DSAT)),
    )


def circuit_config_from_dict(obj: dict) -> CircuitConfig:
    """
    Read the circuit part of an experiment file.

    Human units (ps, fF, ohm, um, mA) are converted to SI here.
    """
    if not isinstance(obj, dict):
        raise ConfigError("circuit description must be a JSON object")
    vdd = float(obj.get("vdd_v", VDD))
    try:
        lines = [_line_from_dict(x) for x in obj["lines"]]
        couplings = [CouplingSpec(str(c["a"]), str(c["b"]), float(c["total_ff"]) * FF)
                     for c in obj.get("couplings", [])]
        drivers = {str(d["line"]): float(d.get("r_ohm", DRIVER_R)) for d in obj.get("drivers", [])}
        victim = str(obj["victim"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError("bad circuit description: %s" % e) from None

    rx = obj.get("receiver")
    receiver = receiver_from_dict(rx, vdd) if rx is not None else None
    load = float(rx.get("load_ff", RECEIVER_LOAD / FF)) * FF if rx is not None else 0.0
    sim = obj.get("sim", {})
    return CircuitConfig(
        lines=lines, couplings=couplings, drivers=drivers, receiver=receiver, victim=victim,
        dt=float(sim.get("dt_ps", DT / PS)) * PS,
        t_stop=float(sim.get("tstop_ps", 3000)) * PS,
        observed=tuple(obj.get("observed", ())),
        receiver_load=load, vdd=vdd,
        static_levels={str(k): float(v) for k, v in obj.get("static_levels", {}).items()},
    )


if __name__ == "__main__":
    inv = InverterModel(drive_strength=4)
    for vi in (0.0, 0.3, 0.6, 0.9, 1.2):
        print(vi, dc_output(inv, vi), receiver_current(vi, 0.6, inv))
