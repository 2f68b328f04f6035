"""
Equivalent linear waveform fitting.

Every method works on the rising form of the noisy input: falling inputs are mirrored
on entry and the fitted line is mirrored back. Least squares problems are solved in
normalized time (window mapped onto [-1, 1]) and converted back to SI at the end.
"""
from dataclasses import dataclass, field, asdict
import logging

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brute

from core import (ConfigError, DegenerateAreaError, DegenerateWeightsError, FitError, Method,
                  NotATransitionError)
from core import SAMPLE_COUNT, SGDP_OBJECTIVE, GAUSS_NEWTON_MAX_ITERS, PARAM_TOL, GRID_FALLBACK
from core import MID_THRESHOLD
from characterize import NoiselessCharacterization, SensitivityProfile, effective, rho_at_voltages
from waveform import (SampledWaveform, LinearWaveform, as_rising, critical_region, crossing_times,
                      last_crossing, resample_uniform, slew_10_90)

logger = logging.getLogger(__name__)

OBJECTIVES = ("squared", "literal")
# 2x2 systems worse conditioned than this are treated as singular
MAX_CONDITION = 1e12
MAX_HALVINGS = 40
# half width of the brute force box around a non-converged solution, relative
GRID_BOX = 0.1
GRID_POINTS = 21


@dataclass(frozen=True, slots=True)
class FitSettings:
    sample_count: int = SAMPLE_COUNT
    sgdp_objective: str = SGDP_OBJECTIVE
    gauss_newton_max_iters: int = GAUSS_NEWTON_MAX_ITERS
    param_tol: float = PARAM_TOL
    grid_fallback: bool = GRID_FALLBACK

    def __post_init__(self):
        if int(self.sample_count) != self.sample_count or self.sample_count < 4:
            raise ConfigError("sample count must be an integer >= 4, got %r" % self.sample_count)
        if self.sgdp_objective not in OBJECTIVES:
            raise ConfigError("sgdp objective must be one of %s, got %r" % (OBJECTIVES, self.sgdp_objective))
        if self.gauss_newton_max_iters < 1:
            raise ConfigError("gauss_newton_max_iters must be >= 1")
        if not self.param_tol > 0:
            raise ConfigError("param_tol must be positive")

    def replace(self, **kw) -> "FitSettings":
        return FitSettings(**{**asdict(self), **kw})


DEFAULT_SETTINGS = FitSettings()


@dataclass(frozen=True, slots=True)
class FitDiagnostics:
    objective: float | None = None
    iterations: int = 0
    converged: bool = True
    shift_applied: bool = False
    delta: float = 0.0
    window: tuple[float, float] | None = None
    samples: int | None = None
    noiseless_source: str | None = None
    blind_spot: bool = False
    fallback: str | None = None
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window) if self.window is not None else None
        d["notes"] = list(self.notes)
        return d


@dataclass(frozen=True, slots=True)
class FitResult:
    gamma: LinearWaveform
    method: Method
    diagnostics: FitDiagnostics

    @property
    def arrival_time(self) -> float:
        return self.gamma.arrival_time

    @property
    def slew(self) -> float:
        return self.gamma.slew_10_90

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "a": self.gamma.a,
            "b": self.gamma.b,
            "arrival_s": self.gamma.arrival_time,
            "slew_s": self.gamma.slew_10_90,
            "diagnostics": self.diagnostics.to_dict(),
        }


# ==================== Shared pieces ====================
def _anchor(wf: SampledWaveform) -> float:
    t = last_crossing(wf, MID_THRESHOLD * wf.vdd)
    if t is None:
        raise NotATransitionError("noisy input never crosses 0.5*vdd")
    return t


def _finish(gamma_r: LinearWaveform, mirrored: bool) -> LinearWaveform:
    return gamma_r.mirrored() if mirrored else gamma_r


def _check_direction(noisy: SampledWaveform, ch: NoiselessCharacterization):
    if ch.direction is not noisy.direction:
        logger.warning("fitting a %s input with a characterization taken on a %s input",
                       noisy.direction.value, ch.direction.value)


class _Frame:
    """Maps a window [t0, t1] onto tau in [-1, 1]"""
    __slots__ = ("mid", "half")

    def __init__(self, t0: float, t1: float):
        self.mid = 0.5 * (t0 + t1)
        self.half = 0.5 * (t1 - t0)
        if not self.half > 0:
            raise FitError("fit window has zero width")

    def tau(self, t):
        return (np.asarray(t) - self.mid) / self.half

    def line(self, alpha: float, beta: float, vdd: float) -> LinearWaveform:
        a = alpha / self.half
        return LinearWaveform(a, beta - a * self.mid, vdd)

    def params(self, gamma: LinearWaveform) -> np.ndarray:
        return np.array([gamma.a * self.half, gamma.a * self.mid + gamma.b])


def _weighted_line(tau: np.ndarray, v: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    """
    Closed form weighted least squares line v ~ alpha*tau + beta.

    @raise DegenerateWeightsError: no weight, or weight on a single time only
    """
    sw = float(np.sum(w))
    if not sw > 0:
        raise DegenerateWeightsError("all sample weights are zero")
    tm = float(np.dot(w, tau)) / sw
    dt = tau - tm
    stt = float(np.dot(w, dt * dt))
    if not stt > 0:
        raise DegenerateWeightsError("weights are concentrated on a single sample time")
    vm = float(np.dot(w, v)) / sw
    alpha = float(np.dot(w, dt * (v - vm))) / stt
    return alpha, vm - alpha * tm


def _uniform_samples(wf: SampledWaveform, t0: float, t1: float, count: int):
    s = resample_uniform(wf, t0, t1, count)
    return s.t, s.v


def _shift_wrapper(noisy: SampledWaveform, ch: NoiselessCharacterization):
    """
    Frame for non-overlapping gates: the fit runs on the input moved back by delta against
    the characterization whose output was moved back by delta, the line is moved forward after.
    """
    ch_eff = effective(ch)
    if ch.overlap:
        return noisy, ch_eff, 0.0
    return noisy.shifted(-ch.delta), ch_eff, ch.delta


def _noiseless_offset(wf: SampledWaveform, ch: NoiselessCharacterization, delta: float = 0.0) -> float:
    """
    Time to add to the characterization's times to place them on wf.

    Characterizations taken on given waveforms keep their own time frame, which wf shares
    once moved back by delta. Ramp characterizations have an arbitrary time origin and are
    placed by matching latest 0.5*vdd crossings.
    """
    if ch.fixed_frame:
        return -delta
    ref = last_crossing(ch.v_in_ref, MID_THRESHOLD * ch.vdd)
    if ref is None:
        raise NotATransitionError("noiseless input never crosses 0.5*vdd")
    return _anchor(wf) - ref


def _noiseless_weights(ch: NoiselessCharacterization, tau_t: np.ndarray) -> np.ndarray:
    """rho_t at times in the characterization frame, zero outside its critical region"""
    t, rho = ch.rho_t.t, ch.rho_t.rho
    region = ch.region
    eps = 1e-9 * region.width
    inside_samples = np.nonzero((t >= region.t_first) & (t <= region.t_last))[0]
    if inside_samples.size == 0:
        return np.zeros_like(tau_t)
    lo, hi = t[inside_samples[0]], t[inside_samples[-1]]
    w = np.interp(np.clip(tau_t, lo, hi), t, rho)
    outside = (tau_t < region.t_first - eps) | (tau_t > region.t_last + eps)
    w[outside] = 0.0
    return w


# ==================== P1 / P2 ====================
def fit_p1(noisy: SampledWaveform, ch: NoiselessCharacterization, settings: FitSettings = DEFAULT_SETTINGS) -> FitResult:
    """Noiseless slew, anchored at the latest 0.5*vdd crossing of the noisy input"""
    wf, mirrored = as_rising(noisy)
    t50 = _anchor(wf)
    slew = slew_10_90(ch.v_in_ref)
    gamma = LinearWaveform.from_arrival_slew(t50, slew, wf.vdd)
    diag = FitDiagnostics(noiseless_source=ch.source)
    return FitResult(_finish(gamma, mirrored), Method.P1, diag)


def fit_p2(noisy: SampledWaveform, settings: FitSettings = DEFAULT_SETTINGS) -> FitResult:
    """Slew from the earliest 0.1*vdd to the latest 0.9*vdd crossing, anchored at the latest 0.5*vdd crossing"""
    wf, mirrored = as_rising(noisy)
    t50 = _anchor(wf)
    slew = slew_10_90(wf)
    if not slew > 0:
        raise NotATransitionError("noisy input has a zero 10-90% span")
    region = critical_region(wf)
    gamma = LinearWaveform.from_arrival_slew(t50, slew, wf.vdd)
    diag = FitDiagnostics(window=(region.t_first, region.t_last))
    return FitResult(_finish(gamma, mirrored), Method.P2, diag)


# ==================== LSF3 ====================
def fit_lsf3(noisy: SampledWaveform, settings: FitSettings = DEFAULT_SETTINGS) -> FitResult:
    """Unweighted least squares over P uniform samples of the noisy critical region"""
    wf, mirrored = as_rising(noisy)
    region = critical_region(wf)
    t, v = _uniform_samples(wf, region.t_first, region.t_last, settings.sample_count)
    frame = _Frame(region.t_first, region.t_last)
    tau = frame.tau(t)
    alpha, beta = _weighted_line(tau, v, np.ones_like(tau))
    e = v - (alpha * tau + beta)
    diag = FitDiagnostics(objective=float(np.dot(e, e)), window=(region.t_first, region.t_last),
                          samples=settings.sample_count)
    return FitResult(_finish(frame.line(alpha, beta, wf.vdd), mirrored), Method.LSF3, diag)


# ==================== E4 ====================
def clamped_area(wf: SampledWaveform, t_x: float) -> float:
    """
    Integral of clamp(vdd - v, 0, 0.5*vdd) from t_x to the end of the record.

    The integrand is piecewise linear with kinks where v crosses vdd or 0.5*vdd; those
    points are inserted so the trapezoidal sum is exact.
    """
    vdd = wf.vdd
    later = wf.t > t_x
    t = np.concatenate(([t_x], wf.t[later]))
    if len(t) < 2:
        return 0.0
    tail = SampledWaveform(t, wf.sample_at(t), vdd)
    kinks = crossing_times(tail, vdd) + crossing_times(tail, MID_THRESHOLD * vdd)
    t = np.union1d(t, np.asarray(kinks, dtype=float))
    g = np.clip(vdd - tail.sample_at(t), 0.0, MID_THRESHOLD * vdd)
    return float(trapezoid(g, t))


def fit_e4(noisy: SampledWaveform, ch: NoiselessCharacterization | None = None,
           settings: FitSettings = DEFAULT_SETTINGS) -> FitResult:
    """
    Line through the latest 0.5*vdd crossing whose triangle up to vdd has the same area
    as the noisy input's band between 0.5*vdd and vdd after that crossing.

    @raise DegenerateAreaError: zero area and no characterization to take the P1 slope from
    """
    wf, mirrored = as_rising(noisy)
    t_x = _anchor(wf)
    area = clamped_area(wf, t_x)
    half = MID_THRESHOLD * wf.vdd
    if area > 0:
        a = half * half / (2 * area)
        gamma = LinearWaveform(a, half - a * t_x, wf.vdd)
        diag = FitDiagnostics(objective=area, window=(t_x, float(wf.t[-1])))
    elif ch is not None:
        gamma = LinearWaveform.from_arrival_slew(t_x, slew_10_90(ch.v_in_ref), wf.vdd)
        diag = FitDiagnostics(objective=area, window=(t_x, float(wf.t[-1])), fallback="p1-slope",
                              noiseless_source=ch.source, notes=("zero area after the 0.5*vdd crossing",))
        logger.info("E4 area is zero at t=%g, using the noiseless slope", t_x)
    else:
        raise DegenerateAreaError("input is already at vdd at its latest 0.5*vdd crossing (t=%g)" % t_x)
    return FitResult(_finish(gamma, mirrored), Method.E4, diag)


# ==================== WLS5 ====================
def _wls5_samples(wf: SampledWaveform, ch: NoiselessCharacterization, count: int, offset: float):
    """
    P uniform samples of the noiseless critical region moved by offset onto the noisy
    input, and the noiseless rho at each.
    """
    w0 = max(ch.region.t_first + offset, float(wf.t[0]))
    w1 = min(ch.region.t_last + offset, float(wf.t[-1]))
    if not w0 < w1:
        raise DegenerateWeightsError("the noiseless critical region lies outside the noisy record")
    t, v = _uniform_samples(wf, w0, w1, count)
    w = _noiseless_weights(ch, t - offset)
    noisy_region = critical_region(wf)
    blind = noisy_region.t_last > w1 or noisy_region.t_first < w0
    return t, v, w, (w0, w1), blind


def fit_wls5(noisy: SampledWaveform, ch: NoiselessCharacterization,
             settings: FitSettings = DEFAULT_SETTINGS) -> FitResult:
    """
    Least squares weighted by the noiseless sensitivity over the noiseless critical region.

    The window is a fixed function of the characterization: noise outside it (and, for
    ramp characterizations, away from the latest 0.5*vdd crossing) leaves the result unchanged.
    """
    _check_direction(noisy, ch)
    work, ch_eff, delta = _shift_wrapper(noisy, ch)
    wf, mirrored = as_rising(work)
    offset = _noiseless_offset(wf, ch_eff, delta)
    t, v, w, window, blind = _wls5_samples(wf, ch_eff, settings.sample_count, offset)
    frame = _Frame(*window)
    tau = frame.tau(t)
    try:
        alpha, beta = _weighted_line(tau, v, w)
    except DegenerateWeightsError as e:
        raise DegenerateWeightsError("%s: the noisy transition lies outside the noiseless critical "
                                     "region, which WLS5 ignores" % e) from None
    e = v - (alpha * tau + beta)
    gamma = _finish(frame.line(alpha, beta, wf.vdd), mirrored)
    if delta:
        gamma = gamma.shifted(delta)
        window = (window[0] + delta, window[1] + delta)
    diag = FitDiagnostics(objective=float(np.dot(w, e * e)), window=window, samples=settings.sample_count,
                          shift_applied=bool(delta), delta=delta, noiseless_source=ch.source,
                          blind_spot=blind,
                          notes=("noisy critical region extends outside the noiseless one",) if blind else ())
    return FitResult(gamma, Method.WLS5, diag)


# ==================== SGDP ====================
def rho_eff_map(noisy: SampledWaveform, ch: NoiselessCharacterization,
                settings: FitSettings = DEFAULT_SETTINGS) -> SensitivityProfile:
    """
    Sensitivity along the noisy input: P uniform samples of its critical region, each
    given the noiseless rho (and drho/dv) at the same input voltage.
    """
    wf, _ = as_rising(noisy)
    region = critical_region(wf)
    t, v = _uniform_samples(wf, region.t_first, region.t_last, settings.sample_count)
    rho, drho = rho_at_voltages(effective(ch), v)
    return SensitivityProfile(t, rho, drho)


def _sgdp_terms(e, rho, drho):
    """
    Output error rho*e + drho*e^2/2 and its derivative in e. Past the vertex of the
    quadratic the error is held at its extreme value, so it stays monotone in e.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = np.where(drho != 0, -rho / drho, 0.0)
    held = np.where(drho > 0, np.maximum(e, vertex), np.where(drho < 0, np.minimum(e, vertex), e))
    return rho * held + 0.5 * drho * held * held, rho + drho * held


def _sgdp_residual(params, tau, v, rho, drho, vdd):
    """
    Output error at each sample against the line saturated to [0, vdd], and the
    derivative of each error in the line value (zero where the line is saturated).
    """
    line = params[0] * tau + params[1]
    r, slope = _sgdp_terms(v - np.clip(line, 0.0, vdd), rho, drho)
    return r, slope * ((line > 0.0) & (line < vdd))


def _sgdp_jacobian(tau, g):
    return -np.column_stack((g * tau, g))


def sgdp_gradient(params, tau, v, rho, drho, vdd) -> np.ndarray:
    """Gradient of the squared objective, up to a factor 2"""
    r, g = _sgdp_residual(params, tau, v, rho, drho, vdd)
    return _sgdp_jacobian(tau, g).T @ r


def _gauss_newton(p, tau, v, rho, drho, vdd, settings: FitSettings):
    r, g = _sgdp_residual(p, tau, v, rho, drho, vdd)
    cost = float(r @ r)
    converged = False
    it = 0
    for it in range(1, settings.gauss_newton_max_iters + 1):
        if cost == 0.0:
            converged = True
            break
        J = _sgdp_jacobian(tau, g)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            trial = p + lam * step
            rt, gt = _sgdp_residual(trial, tau, v, rho, drho, vdd)
            ct = float(rt @ rt)
            if ct <= cost:
                break
            lam *= 0.5
        else:
            # no descent along the step, stationary within rounding
            converged = bool(np.linalg.norm(step) <= np.sqrt(settings.param_tol) * max(np.linalg.norm(p), 1.0))
            break
        p, r, g, cost = trial, rt, gt, ct
        if np.linalg.norm(lam * step) <= settings.param_tol * max(np.linalg.norm(p), 1e-300):
            converged = True
            break
    return p, cost, it, converged


def _sgdp_seeds(tau, v, rho, frame: "_Frame", wf: SampledWaveform, ch: NoiselessCharacterization):
    """
    Starting lines, first the rho weighted least squares line, then the rho^2 weighted one
    and the P1 line. Degenerate weightings are skipped; the P1 line always exists.
    """
    seeds = []
    for name, w in (("rho", rho), ("rho-squared", rho * rho)):
        try:
            seeds.append((name, np.array(_weighted_line(tau, v, w))))
        except DegenerateWeightsError:
            logger.debug("SGDP %s seed skipped, weights are degenerate", name)
    p1 = LinearWaveform.from_arrival_slew(_anchor(wf), slew_10_90(ch.v_in_ref), wf.vdd)
    seeds.append(("p1", frame.params(p1)))
    return seeds


def _sgdp_squared(tau, v, rho, drho, vdd, seeds, settings: FitSettings):
    """
    Gauss-Newton from every seed, keeping the lowest objective (earliest seed on ties).
    A grid search around that run restarts the solver when it did not converge.
    """
    best = None
    iters = 0
    for name, seed in seeds:
        p_s, cost_s, it_s, conv_s = _gauss_newton(seed, tau, v, rho, drho, vdd, settings)
        iters += it_s
        if best is None or cost_s < best[1]:
            best = (p_s, cost_s, conv_s, name)
    p, cost, converged, seed_name = best
    fallback = None
    if not converged and settings.grid_fallback:
        def f(q):
            r, _ = _sgdp_residual(q, tau, v, rho, drho, vdd)
            return float(r @ r)
        box = [(x - GRID_BOX * abs(x) - 1e-12, x + GRID_BOX * abs(x) + 1e-12) for x in p]
        q = np.asarray(brute(f, box, Ns=GRID_POINTS, finish=None))
        if f(q) < cost:
            p2, cost2, iters2, converged = _gauss_newton(q, tau, v, rho, drho, vdd, settings)
            iters += iters2
            if cost2 <= cost:
                p, cost = p2, cost2
        fallback = "grid"
        logger.debug("SGDP Gauss-Newton did not converge, grid restart %s", "converged" if converged else "failed")
    return p, cost, iters, converged, fallback, seed_name


def _sgdp_literal(tau, v, rho, drho):
    """
    Stationarity conditions of the unsquared sum, a 2x2 linear system in (alpha, beta).
    This variant uses the unsaturated line.
    """
    g = rho + drho * v
    A = np.array([[np.dot(drho, tau * tau), np.dot(drho, tau)],
                  [np.dot(drho, tau), np.sum(drho)]])
    rhs = np.array([np.dot(tau, g), np.sum(g)])
    if not np.any(drho) or np.linalg.cond(A) > MAX_CONDITION:
        alpha, beta = _weighted_line(tau, v, rho)
        return np.array([alpha, beta]), "weighted-ls"
    return np.linalg.solve(A, rhs), None


def fit_sgdp(noisy: SampledWaveform, ch: NoiselessCharacterization,
             settings: FitSettings = DEFAULT_SETTINGS) -> FitResult:
    """
    Sensitivity-guided fit: each noisy sample is weighted by the noiseless sensitivity at
    its own voltage, with the second order term of the output error expansion.

    Errors are taken against the line saturated to [0, vdd], the input the gate would
    actually see, so noise where the line sits on a rail does not move the fit.
    """
    _check_direction(noisy, ch)
    work, ch_eff, delta = _shift_wrapper(noisy, ch)
    wf, mirrored = as_rising(work)
    prof = rho_eff_map(work, ch_eff, settings)
    rho, drho = prof.rho, prof.drho_dv
    if not np.any(rho > 0):
        raise DegenerateWeightsError("noisy input never enters the characterized voltage band")
    frame = _Frame(prof.t[0], prof.t[-1])
    tau = frame.tau(prof.t)
    v = wf.sample_at(prof.t)

    notes = []
    if settings.sgdp_objective == "squared":
        seeds = _sgdp_seeds(tau, v, rho, frame, wf, ch_eff)
        p, cost, iters, converged, fallback, seed = _sgdp_squared(tau, v, rho, drho, wf.vdd, seeds, settings)
        if seed != seeds[0][0]:
            notes.append("lowest objective reached from the %s seed" % seed)
        if not converged:
            notes.append("Gauss-Newton stopped before convergence, best iterate returned")
    else:
        p, fallback = _sgdp_literal(tau, v, rho, drho)
        e = v - (p[0] * tau + p[1])
        cost, iters, converged = float(np.sum(rho * e + 0.5 * drho * e * e)), 0, True
        if fallback:
            notes.append("literal system singular, sensitivity weighted least squares used")

    gamma = _finish(frame.line(float(p[0]), float(p[1]), wf.vdd), mirrored)
    window = (float(prof.t[0]), float(prof.t[-1]))
    if delta:
        gamma = gamma.shifted(delta)
        window = (window[0] + delta, window[1] + delta)
    diag = FitDiagnostics(objective=cost, iterations=iters, converged=converged, shift_applied=bool(delta),
                          delta=delta, window=window, samples=settings.sample_count,
                          noiseless_source=ch.source, fallback=fallback, notes=tuple(notes))
    return FitResult(gamma, Method.SGDP, diag)


def sgdp_gradient_ratio(noisy: SampledWaveform, ch: NoiselessCharacterization, result: FitResult,
                        settings: FitSettings = DEFAULT_SETTINGS) -> float:
    """
    Norm of the squared objective's gradient at a fitted line, relative to the gradient at
    the rho weighted least squares line (the first SGDP seed).
    """
    work, ch_eff, delta = _shift_wrapper(noisy, ch)
    wf, mirrored = as_rising(work)
    prof = rho_eff_map(work, ch_eff, settings)
    frame = _Frame(prof.t[0], prof.t[-1])
    tau = frame.tau(prof.t)
    v = wf.sample_at(prof.t)
    gamma = result.gamma.shifted(-delta) if delta else result.gamma
    if mirrored:
        gamma = gamma.mirrored()
    seed = np.array(_weighted_line(tau, v, prof.rho))
    g = np.linalg.norm(sgdp_gradient(frame.params(gamma), tau, v, prof.rho, prof.drho_dv, wf.vdd))
    g0 = np.linalg.norm(sgdp_gradient(seed, tau, v, prof.rho, prof.drho_dv, wf.vdd))
    return float(g / g0) if g0 > 0 else float(g)


# ==================== Output side ====================
def predict_output_first_order(ch: NoiselessCharacterization, gamma: LinearWaveform, noisy: SampledWaveform,
                               settings: FitSettings = DEFAULT_SETTINGS) -> SampledWaveform:
    """
    First order output reconstruction for inspection:
    v_out_eff = v_out_ref + polarity * rho_eff * (gamma - v_noisy) at the rho_eff samples.

    The correction carries the gate polarity: raising an inverter's input lowers its output.
    The reference output is placed on the noisy input the way WLS5 places its window; for
    aligned characterizations the result is moved forward by the shift.
    """
    ch_eff = effective(ch)
    prof = rho_eff_map(noisy, ch_eff, settings)
    wf, _ = as_rising(noisy)
    offset = _noiseless_offset(wf, ch_eff)
    ref = ch_eff.v_out_ref
    v_ref = np.interp(prof.t - offset, ref.t, ref.v)
    correction = ch_eff.polarity * prof.rho * (gamma.value(prof.t) - noisy.sample_at(prof.t))
    return SampledWaveform(prof.t + ch_eff.shift, v_ref + correction, ref.vdd, ref.direction)


# ==================== Dispatch ====================
def fit(method: "Method | str", noisy: SampledWaveform, ch: NoiselessCharacterization | None,
        settings: FitSettings = DEFAULT_SETTINGS) -> FitResult:
    method = Method.parse(method)
    if method in (Method.P1, Method.WLS5, Method.SGDP) and ch is None:
        raise ConfigError("%s needs a noiseless characterization" % method.value)
    match method:
        case Method.P1:
            return fit_p1(noisy, ch, settings)
        case Method.P2:
            return fit_p2(noisy, settings)
        case Method.LSF3:
            return fit_lsf3(noisy, settings)
        case Method.E4:
            return fit_e4(noisy, ch, settings)
        case Method.WLS5:
            return fit_wls5(noisy, ch, settings)
        case Method.SGDP:
            return fit_sgdp(noisy, ch, settings)


def objective_function(method: "Method | str", noisy: SampledWaveform, ch: NoiselessCharacterization | None,
                       settings: FitSettings = DEFAULT_SETTINGS):
    """
    The objective a least squares method minimizes, as a function of an SI line (a, b)
    in the noisy input's own polarity. Broadcasts over array arguments.
    """
    method = Method.parse(method)
    wf, mirrored = as_rising(noisy)
    vdd = noisy.vdd
    if method is Method.LSF3:
        region = critical_region(wf)
        t, v = _uniform_samples(wf, region.t_first, region.t_last, settings.sample_count)
        w = np.ones_like(t)
        drho = None
    elif method is Method.WLS5:
        work, ch_eff, delta = _shift_wrapper(noisy, ch)
        wf_w, _ = as_rising(work)
        offset = _noiseless_offset(wf_w, ch_eff, delta)
        t, v, w, _, _ = _wls5_samples(wf_w, ch_eff, settings.sample_count, offset)
        t = t + delta
        drho = None
    elif method is Method.SGDP:
        prof = rho_eff_map(noisy, ch, settings)
        t, v, w, drho = prof.t, wf.sample_at(prof.t), prof.rho, prof.drho_dv
    else:
        raise ConfigError("%s has no least squares objective" % method.value)

    def f(a, b):
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        if mirrored:
            a, b = -a, vdd - b
        if drho is None:
            e = v - (a * t + b)
            return np.sum(w * e * e, axis=-1)
        r, _ = _sgdp_terms(v - np.clip(a * t + b, 0.0, vdd), w, drho)
        return np.sum(r * r, axis=-1)

    return f


if __name__ == "__main__":
    from waveform import saturated_ramp
    from core import PS
    ramp = saturated_ramp(200 * PS, 150 * PS, 800 * PS, 1 * PS)
    print(fit_lsf3(ramp).to_dict())
