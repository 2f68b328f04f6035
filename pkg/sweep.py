"""
Aggressor alignment sweeps: the reference simulation of every case, the gate delay each
fitting method predicts for it, and the Max/Avg error tables built from those.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv
import io
import itertools
import json
import logging
import math
import os
import pathlib
import statistics
import time

import numpy as np

from core import ConfigError, Direction, FitError, Method, NoisyStaError, ReportWriter
from core import DT, DRIVER_R, R_SEG, C_SEG, RECEIVER_LOAD, UM_PER_SEGMENT, PS, NS, FF
from characterize import NoiselessCharacterization, build_characterization, characterize_noiseless
from fitters import FitResult, FitSettings, DEFAULT_SETTINGS, fit
from oracle import (CircuitConfig, CouplingSpec, InverterModel, LineSpec, Stimulus, RECEIVER_OUTPUT,
                    build_circuit, circuit_config_from_dict, measure_gate_delay, simulate, simulate_receiver)
from waveform import SampledWaveform, LinearWaveform, last_crossing, slew_10_90

logger = logging.getLogger(__name__)

THREADS_ENV = "NOISY_STA_THREADS"

# Default experiment setup
SWEEP_CASES = 200
SWEEP_WINDOW = 1 * NS
INPUT_SLEW = 150 * PS
COUPLING_TOTAL = 100 * FF
VICTIM_START = 1 * NS
SWEEP_T_STOP = 4 * NS
RECEIVER_DRIVE = 4

ALL_METHODS = tuple(Method)
BASELINE_METHODS = (Method.P1, Method.P2, Method.LSF3, Method.E4)


# ==================== Experiment description ====================
@dataclass(frozen=True)
class SweepSpec:
    name: str
    circuit: CircuitConfig
    victim: Stimulus
    aggressors: tuple[Stimulus, ...]     # timing at offset 0
    offsets: tuple[float, ...]
    methods: tuple[Method, ...] = ALL_METHODS
    settings: FitSettings = DEFAULT_SETTINGS
    independent_offsets: bool = False
    # span the offsets were spread over, kept so a new count stays inside it
    window: float = SWEEP_WINDOW
    center: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "aggressors", tuple(self.aggressors))
        object.__setattr__(self, "offsets", tuple(float(x) for x in self.offsets))
        object.__setattr__(self, "methods", tuple(Method.parse(m) for m in self.methods))
        if len(self.offsets) < 1:
            raise ConfigError("a sweep needs at least one offset")
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ConfigError("sweep offsets must be strictly increasing")
        if not self.methods:
            raise ConfigError("a sweep needs at least one method")
        if self.circuit.receiver is None:
            raise ConfigError("a sweep needs a receiver on the victim")
        if self.victim.source != self.circuit.victim:
            raise ConfigError("victim stimulus drives %r, but the victim line is %r"
                              % (self.victim.source, self.circuit.victim))
        latest = max([self.victim.end_time] + [a.end_time + self.offsets[-1] for a in self.aggressors])
        if not self.circuit.t_stop > latest:
            raise ConfigError("t_stop=%g s ends before the latest stimulus (%g s)" % (self.circuit.t_stop, latest))

    def cases(self) -> list[tuple[float, ...]]:
        """Per-aggressor offsets of every case, in sweep order"""
        n = max(len(self.aggressors), 1)
        if self.independent_offsets and n > 1:
            return list(itertools.product(self.offsets, repeat=n))
        return [(x,) * n for x in self.offsets]

    def stimuli(self, offsets: tuple[float, ...]) -> list[Stimulus]:
        return [self.victim] + [a.shifted(off) for a, off in zip(self.aggressors, offsets)]

    def uncoupled(self) -> "SweepSpec":
        """Same experiment with every coupling capacitance removed"""
        return self.replace(name=self.name + "-uncoupled", circuit=self.circuit.replace(couplings=()))

    def replace(self, **kw) -> "SweepSpec":
        fields = dict(name=self.name, circuit=self.circuit, victim=self.victim, aggressors=self.aggressors,
                      offsets=self.offsets, methods=self.methods, settings=self.settings,
                      independent_offsets=self.independent_offsets, window=self.window, center=self.center)
        fields.update(kw)
        return SweepSpec(**fields)

    def with_count(self, count: int) -> "SweepSpec":
        """Same experiment with count offsets spread over its own window"""
        return self.replace(offsets=sweep_offsets(count, self.window, self.center))


def sweep_offsets(count: int = SWEEP_CASES, window: float = SWEEP_WINDOW, center: float = 0.0) -> tuple[float, ...]:
    if count < 1:
        raise ConfigError("offset count must be >= 1")
    if count == 1:
        return (center,)
    return tuple(np.linspace(center - window / 2, center + window / 2, count).tolist())


def _aggressor_direction(victim: Direction, mode: str) -> Direction:
    match mode:
        case "opposing":
            return victim.flipped()
        case "same":
            return victim
    raise ConfigError("aggressor_direction must be 'opposing' or 'same', got %r" % mode)


def _line(id: str, length_um: float) -> LineSpec:
    return LineSpec.per_segment(id, length_um, int(round(length_um / UM_PER_SEGMENT)), R_SEG, C_SEG)


def build_config_i(count: int = SWEEP_CASES, window: float = SWEEP_WINDOW,
                   victim_direction: Direction = Direction.RISING, aggressor_direction: str = "opposing",
                   settings: FitSettings = DEFAULT_SETTINGS, methods=ALL_METHODS) -> SweepSpec:
    """One aggressor x next to the victim y, 1000 um each, 100 fF total coupling"""
    circuit = CircuitConfig(
        lines=(_line("x", 1000), _line("y", 1000)),
        couplings=(CouplingSpec("x", "y", COUPLING_TOTAL),),
        drivers={"x": DRIVER_R, "y": DRIVER_R},
        receiver=InverterModel(drive_strength=RECEIVER_DRIVE),
        victim="y",
        dt=DT,
        t_stop=SWEEP_T_STOP,
        receiver_load=RECEIVER_LOAD,
    )
    victim = Stimulus("y", VICTIM_START, INPUT_SLEW, victim_direction)
    agg_dir = _aggressor_direction(victim.direction, aggressor_direction)
    aggressors = (Stimulus("x", VICTIM_START, INPUT_SLEW, agg_dir),)
    return SweepSpec("config-i", circuit, victim, aggressors, sweep_offsets(count, window), methods, settings,
                     window=window)


def build_config_ii(count: int = SWEEP_CASES, window: float = SWEEP_WINDOW,
                    victim_direction: Direction = Direction.RISING, aggressor_direction: str = "opposing",
                    settings: FitSettings = DEFAULT_SETTINGS, methods=ALL_METHODS,
                    independent_offsets: bool = False) -> SweepSpec:
    """Victim y between aggressors x1 and x2, 500 um each, 100 fF total coupling per aggressor"""
    circuit = CircuitConfig(
        lines=(_line("x1", 500), _line("y", 500), _line("x2", 500)),
        couplings=(CouplingSpec("x1", "y", COUPLING_TOTAL), CouplingSpec("x2", "y", COUPLING_TOTAL)),
        drivers={"x1": DRIVER_R, "y": DRIVER_R, "x2": DRIVER_R},
        receiver=InverterModel(drive_strength=RECEIVER_DRIVE),
        victim="y",
        dt=DT,
        t_stop=SWEEP_T_STOP,
        receiver_load=RECEIVER_LOAD,
    )
    victim = Stimulus("y", VICTIM_START, INPUT_SLEW, victim_direction)
    agg_dir = _aggressor_direction(victim.direction, aggressor_direction)
    aggressors = (Stimulus("x1", VICTIM_START, INPUT_SLEW, agg_dir),
                  Stimulus("x2", VICTIM_START, INPUT_SLEW, agg_dir))
    return SweepSpec("config-ii", circuit, victim, aggressors, sweep_offsets(count, window), methods,
                     settings, independent_offsets, window=window)


def sweep_spec_from_dict(obj: dict, name: str = "sweep") -> SweepSpec:
    """Experiment file: a circuit description plus stimuli and sweep sections"""
    circuit = circuit_config_from_dict(obj)
    stim = obj.get("stimuli")
    if not isinstance(stim, dict) or "victim" not in stim:
        raise ConfigError("experiment file needs a stimuli.victim section")
    sw = obj.get("sweep", {})
    try:
        v = stim["victim"]
        victim = Stimulus(circuit.victim, float(v.get("start_ps", VICTIM_START / PS)) * PS,
                          float(v.get("slew_ps", INPUT_SLEW / PS)) * PS, Direction.parse(v.get("direction", "rising")))
        agg_dir = _aggressor_direction(victim.direction, sw.get("aggressor_direction", "opposing"))
        aggressors = tuple(
            Stimulus(str(a["line"]), victim.start_time, float(a.get("slew_ps", INPUT_SLEW / PS)) * PS, agg_dir)
            for a in stim.get("aggressors", [])
        )
        window = float(sw.get("window_ps", SWEEP_WINDOW / PS)) * PS
        center = float(sw.get("center_ps", 0)) * PS
        offsets = sweep_offsets(int(sw.get("count", SWEEP_CASES)), window, center)
        methods = sw.get("methods", "all")
        methods = ALL_METHODS if methods == "all" else tuple(Method.parse(m) for m in methods)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("bad stimuli/sweep section: %s" % e) from None
    return SweepSpec(str(obj.get("name", name)), circuit, victim, aggressors, offsets, methods,
                     DEFAULT_SETTINGS, bool(sw.get("independent_offsets", False)), window, center)


def load_sweep_spec(path: "str | os.PathLike") -> SweepSpec:
    path = pathlib.Path(path)
    try:
        with path.open(encoding="u8") as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("%s: not valid JSON (%s)" % (path, e)) from None
    return sweep_spec_from_dict(obj, path.stem)


# ==================== Results ====================
@dataclass(frozen=True, slots=True)
class MethodOutcome:
    gamma: LinearWaveform | None
    predicted_delay: float | None
    error: float | None
    failure: str | None = None


@dataclass(frozen=True)
class CaseResult:
    offsets: tuple[float, ...]
    oracle_delay: float | None
    outcomes: dict = field(default_factory=dict)     # Method -> MethodOutcome
    failure: str | None = None

    @property
    def offset(self) -> float:
        return self.offsets[0]


@dataclass(frozen=True, slots=True)
class MethodStats:
    method: Method
    max_abs_error: float | None
    avg_abs_error: float | None
    count: int
    failures: int = 0


# ==================== Running ====================
def characterize_sweep(spec: SweepSpec) -> tuple[NoiselessCharacterization, dict]:
    """
    Noiseless characterization from the victim alone, couplings removed.

    @return: the characterization and the uncoupled waveforms it came from
    """
    circuit = build_circuit(spec.circuit.replace(couplings=()))
    waves = simulate(circuit, [spec.victim])
    v_in = waves[spec.circuit.victim_far_end]
    ch = build_characterization(v_in, waves[RECEIVER_OUTPUT], source="victim", load=spec.circuit.receiver_load)
    logger.info("%s: noiseless delta %.2f ps, overlap %s", spec.name, ch.delta / PS, ch.overlap)
    return ch, waves


def predict_delay(receiver: InverterModel, gamma: LinearWaveform, noisy: SampledWaveform, load: float) -> float:
    """Receiver driven by the clipped line on the noisy input's grid, delay from the noisy 0.5*vdd crossing"""
    out = simulate_receiver(receiver, gamma.sample(noisy.t, clip=True), load)[-1]
    return measure_gate_delay(noisy, out)


def run_case(spec: SweepSpec, ch: NoiselessCharacterization, offsets: tuple[float, ...]) -> CaseResult:
    cfg = spec.circuit
    try:
        waves = simulate(build_circuit(cfg), spec.stimuli(offsets))
        noisy = waves[cfg.victim_far_end]
        oracle_delay = measure_gate_delay(noisy, waves[RECEIVER_OUTPUT])
    except NoisyStaError as e:
        logger.warning("%s offset %s: reference simulation failed: %s", spec.name, offsets, e)
        return CaseResult(offsets, None, {}, str(e))

    outcomes = {}
    for method in spec.methods:
        try:
            res = fit(method, noisy, ch, spec.settings)
            predicted = predict_delay(cfg.receiver, res.gamma, noisy, cfg.receiver_load)
            outcomes[method] = MethodOutcome(res.gamma, predicted, predicted - oracle_delay)
        except NoisyStaError as e:
            logger.warning("%s offset %s: %s failed: %s", spec.name, offsets, method.value, e)
            outcomes[method] = MethodOutcome(None, None, None, str(e))
    return CaseResult(offsets, oracle_delay, outcomes)


_worker_state = {}


def _init_worker(spec: SweepSpec, ch: NoiselessCharacterization):
    _worker_state["spec"] = spec
    _worker_state["ch"] = ch


def _run_worker_case(offsets: tuple[float, ...]) -> CaseResult:
    return run_case(_worker_state["spec"], _worker_state["ch"], offsets)


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError("%s must be an integer, got %r" % (THREADS_ENV, raw)) from None
        if n < 1:
            raise ConfigError("%s must be >= 1" % THREADS_ENV)
        return n
    return os.cpu_count() or 1


def run_sweep(spec: SweepSpec, ch: NoiselessCharacterization | None = None,
              workers: int | None = None) -> list[CaseResult]:
    """
    Every case of the sweep, in sweep order.

    Cases run in worker processes unless workers (or NOISY_STA_THREADS) is 1; the
    result order never depends on the worker count.
    """
    if ch is None:
        ch, _ = characterize_sweep(spec)
    cases = spec.cases()
    workers = worker_count() if workers is None else workers
    workers = min(workers, len(cases))
    logger.info("%s: %d cases, %d methods, %d workers", spec.name, len(cases), len(spec.methods), workers)
    if workers <= 1:
        return [run_case(spec, ch, c) for c in cases]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(spec, ch)) as ex:
        return list(ex.map(_run_worker_case, cases, chunksize=max(1, len(cases) // (4 * workers))))


# ==================== Statistics ====================
def stats(results: list[CaseResult], methods=None) -> list[MethodStats]:
    """Max and mean |error| per method over the cases where it succeeded"""
    if not results:
        raise ConfigError("no sweep results to summarize")
    if methods is None:
        seen = {m for r in results for m in r.outcomes}
        methods = [m for m in Method if m in seen]
    out = []
    for m in methods:
        errs = sorted(abs(r.outcomes[m].error) for r in results
                      if m in r.outcomes and r.outcomes[m].error is not None)
        failures = sum(1 for r in results if m not in r.outcomes or r.outcomes[m].error is None)
        if errs:
            out.append(MethodStats(m, errs[-1], math.fsum(errs) / len(errs), len(errs), failures))
        else:
            out.append(MethodStats(m, None, None, 0, failures))
    return out


def ordering_violations(method_stats: list[MethodStats]) -> list[str]:
    """
    Breaches of the expected accuracy ranking by average error:
    SGDP <= WLS5 <= each of P1, P2, LSF3, E4, and SGDP <= each of those.
    """
    avg = {s.method: s.avg_abs_error for s in method_stats if s.avg_abs_error is not None}
    out = []

    def check(better, worse):
        if better in avg and worse in avg and avg[better] > avg[worse]:
            out.append("%s avg %.1f ps > %s avg %.1f ps" % (better.value, avg[better] / PS, worse.value, avg[worse] / PS))

    check(Method.SGDP, Method.WLS5)
    for m in BASELINE_METHODS:
        check(Method.SGDP, m)
        check(Method.WLS5, m)
    return out


def ordering_holds(method_stats: list[MethodStats]) -> bool:
    return not ordering_violations(method_stats)


def _ps(x: float | None) -> str:
    return "-" if x is None else "%.1f" % (x / PS)


def emit_report(stats_by_config: dict, fmt: str = "plain", title: str | None = None, notes=()) -> str:
    """
    Delay error table: one row per method, a Max/Avg pair per configuration, in ps.

    @param stats_by_config: configuration name -> list of MethodStats, in column order
    @param fmt: "plain" (tab separated) or "markdown"
    """
    if fmt not in ("plain", "markdown"):
        raise ConfigError("report format must be 'plain' or 'markdown', got %r" % fmt)
    names = list(stats_by_config)
    present = {s.method for v in stats_by_config.values() for s in v}
    methods = [m for m in Method if m in present]
    lookup = {(n, s.method): s for n in names for s in stats_by_config[n]}

    header = ["Method"] + [h for n in names for h in ("%s Max" % n, "%s Avg" % n)]
    rows = []
    for m in methods:
        row = [m.value]
        for n in names:
            s = lookup.get((n, m))
            row += [_ps(s.max_abs_error), _ps(s.avg_abs_error)] if s else ["-", "-"]
        rows.append(row)

    w = ReportWriter()
    if fmt == "markdown":
        if title:
            w.writeln("## %s" % title)
            w.writeln()
        w.writeln("| " + " | ".join(header) + " |")
        w.writeln("|" + "|".join(["---"] * len(header)) + "|")
        for row in rows:
            w.writeln("| " + " | ".join(row) + " |")
        if notes:
            w.writeln()
    else:
        if title:
            w.writeln(title)
        w.writeln("\t".join(header))
        for row in rows:
            w.writeln("\t".join(row))
    for line in notes:
        w.writeln(line)
    return w.getvalue()


# ==================== Cases CSV ====================
def _offset_columns(results: list[CaseResult], independent: bool) -> list[str]:
    n = len(results[0].offsets) if results else 1
    if independent and n > 1:
        return ["offset_%d_s" % (i + 1) for i in range(n)]
    return ["offset_s"]


def write_cases_csv(results: list[CaseResult], methods, independent: bool = False) -> str:
    methods = [Method.parse(m) for m in methods]
    off_cols = _offset_columns(results, independent)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(off_cols + ["oracle_delay_s"]
                    + [c for m in methods for c in ("%s_predicted_delay_s" % m.value, "%s_error_s" % m.value)])

    def cell(x):
        return "" if x is None else repr(float(x))

    for r in results:
        row = [cell(x) for x in r.offsets[:len(off_cols)]] + [cell(r.oracle_delay)]
        for m in methods:
            o = r.outcomes.get(m)
            row += [cell(o.predicted_delay), cell(o.error)] if o else ["", ""]
        writer.writerow(row)
    return buf.getvalue()


def read_cases_csv(path: "str | os.PathLike") -> list[CaseResult]:
    """Cases written by write_cases_csv, without the fitted lines"""
    path = pathlib.Path(path)
    with path.open(encoding="u8", newline="") as f:
        reader = csv.DictReader(f)
        cols = reader.fieldnames or []
        off_cols = [c for c in cols if c.startswith("offset")]
        methods = [Method.parse(c[:-len("_error_s")]) for c in cols if c.endswith("_error_s")]
        if not off_cols or "oracle_delay_s" not in cols:
            raise ConfigError("%s is not a sweep cases file" % path)

        def num(x):
            return float(x) if x not in (None, "") else None

        out = []
        for row in reader:
            outcomes = {}
            for m in methods:
                pred, err = num(row["%s_predicted_delay_s" % m.value]), num(row["%s_error_s" % m.value])
                outcomes[m] = MethodOutcome(None, pred, err, None if err is not None else "failed")
            out.append(CaseResult(tuple(num(row[c]) for c in off_cols), num(row["oracle_delay_s"]), outcomes))
    return out


# ==================== Chains and timing ====================
@dataclass(frozen=True)
class ChainResult:
    fits: list[FitResult]
    outputs: list[SampledWaveform]
    arrival: float


def propagate_chain(stages: list[InverterModel], noisy: SampledWaveform, method: "Method | str",
                    settings: FitSettings = DEFAULT_SETTINGS, loads: list[float] | None = None,
                    characterizations: list[NoiselessCharacterization | None] | None = None,
                    dt: float = DT) -> ChainResult:
    """
    Carry a transition through a chain of receivers: each stage is driven by the line
    fitted to its input, and its output becomes the next stage's input.

    @param loads: output load of each stage, defaults to the next stage's gate capacitance
        and the configured receiver load for the last
    @param characterizations: per stage, None entries are characterized on a clean ramp
        at the slew of that stage's input
    """
    if not stages:
        raise ConfigError("a chain needs at least one stage")
    method = Method.parse(method)
    if loads is None:
        loads = [s.input_capacitance for s in stages[1:]] + [RECEIVER_LOAD]
    if characterizations is None:
        characterizations = [None] * len(stages)
    if len(loads) != len(stages) or len(characterizations) != len(stages):
        raise ConfigError("loads and characterizations need one entry per stage")

    fits, outputs = [], []
    wf = noisy
    for i, (stage, load, ch) in enumerate(zip(stages, loads, characterizations)):
        try:
            if ch is None and method not in (Method.P2, Method.LSF3, Method.E4):
                ch = characterize_noiseless(stage, slew_10_90(wf), load, wf.direction, dt)
            res = fit(method, wf, ch, settings)
            wf = simulate_receiver(stage, res.gamma.sample(wf.t, clip=True), load)[-1]
        except NoisyStaError as e:
            raise FitError("chain stage %d: %s" % (i, e)) from e
        fits.append(res)
        outputs.append(wf)
    arrival = last_crossing(wf, 0.5 * wf.vdd)
    if arrival is None:
        raise FitError("chain stage %d: output never crosses 0.5*vdd" % (len(stages) - 1))
    return ChainResult(fits, outputs, arrival)


def time_fits(noisy: SampledWaveform, ch: NoiselessCharacterization, settings: FitSettings = DEFAULT_SETTINGS,
              repeats: int = 1000, methods=ALL_METHODS) -> dict:
    """Median wall time of one fit, per method"""
    out = {}
    for m in methods:
        m = Method.parse(m)
        fit(m, noisy, ch, settings)
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fit(m, noisy, ch, settings)
            samples.append(time.perf_counter() - t0)
        out[m] = statistics.median(samples)
    return out


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    spec = build_config_i(count=5)
    res = run_sweep(spec, workers=1)
    print(emit_report({spec.name: stats(res)}))
