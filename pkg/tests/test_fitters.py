import dataclasses
import pathlib

import numpy as np
import pytest

import fitters
from conftest import VDD, RAMP_SLEW, RAMP_T50, with_noise, triangle
from core import ConfigError, DegenerateAreaError, Direction, Method, NS, PS
from characterize import SensitivityProfile, build_characterization
from fitters import (FitSettings, fit, fit_p1, fit_p2, fit_lsf3, fit_e4, fit_wls5, fit_sgdp, rho_eff_map,
                     sgdp_gradient_ratio, predict_output_first_order, objective_function)
from waveform import SampledWaveform, LinearWaveform, CriticalRegion, read_csv, saturated_ramp

ALL_METHODS = list(Method)
DATA = pathlib.Path(__file__).parent / "data"
STORED = sorted(DATA.glob("noisy_*.csv"))
RAMP_SLOPE = 0.8 * VDD / RAMP_SLEW


@pytest.fixture(scope="module")
def bumped(ramp):
    """Clean ramp with a small bump in the middle of the transition"""
    return with_noise(ramp, triangle(RAMP_T50, 40 * PS, 0.05))


@pytest.fixture(scope="module")
def slow_ch():
    r = saturated_ramp(0, 0.8 * NS, 1 * NS, 1 * PS, VDD)
    return build_characterization(r, r)


# ==================== Noiseless identity ====================
@pytest.mark.parametrize("method", ALL_METHODS)
def test_clean_ramp_is_recovered(method, ramp, buffer_ch):
    res = fit(method, ramp, buffer_ch)
    assert res.method is method
    assert res.arrival_time == pytest.approx(RAMP_T50, abs=1 * PS)
    assert res.gamma.a == pytest.approx(RAMP_SLOPE, rel=0.02)


def test_sgdp_recovers_ramp_with_varying_rho(ramp, power_ch):
    res = fit_sgdp(ramp, power_ch)
    assert res.diagnostics.converged
    assert res.arrival_time == pytest.approx(RAMP_T50, abs=0.01 * PS)
    assert res.gamma.a == pytest.approx(RAMP_SLOPE, rel=1e-6)


@pytest.mark.parametrize("method", [Method.WLS5, Method.SGDP])
def test_clean_ramp_through_slow_receiver(method, four_stage_ch):
    noisy = four_stage_ch.v_in_ref
    res = fit(method, noisy, four_stage_ch)
    t50 = 0.5 * (four_stage_ch.region.t_first + four_stage_ch.region.t_last)
    assert res.arrival_time == pytest.approx(t50, abs=1 * PS)
    assert res.gamma.a == pytest.approx(RAMP_SLOPE, rel=0.02)
    assert res.diagnostics.shift_applied
    assert res.diagnostics.delta == four_stage_ch.delta


@pytest.mark.parametrize("method", ALL_METHODS)
def test_falling_input(method, falling_ramp):
    ch = build_characterization(falling_ramp, falling_ramp)
    res = fit(method, falling_ramp, ch)
    assert res.gamma.direction is Direction.FALLING
    assert res.arrival_time == pytest.approx(RAMP_T50, abs=1 * PS)
    assert res.slew == pytest.approx(RAMP_SLEW, rel=0.02)


# ==================== P1 / P2 ====================
def test_p1_uses_noiseless_slew(crossing_wf, slow_ch):
    res = fit_p1(crossing_wf, slow_ch)
    assert res.gamma.a == pytest.approx(1.2e9, rel=1e-6)
    assert res.arrival_time == pytest.approx(0.657142857e-9, abs=1e-18)
    assert res.diagnostics.noiseless_source == "waveforms"


def test_p2_uses_noisy_slew(crossing_wf):
    res = fit_p2(crossing_wf)
    assert res.slew == pytest.approx(0.871428571e-9, abs=1e-18)
    assert res.arrival_time == pytest.approx(0.657142857e-9, abs=1e-18)


# ==================== LSF3 ====================
def test_lsf3_line_has_zero_residual():
    line = LinearWaveform.from_arrival_slew(1 * NS, 150 * PS, VDD)
    wf = line.sample(np.arange(0, 2 * NS, 1 * PS))
    res = fit_lsf3(wf)
    assert res.diagnostics.objective == pytest.approx(0.0, abs=1e-24)
    assert res.gamma.a == pytest.approx(line.a, rel=1e-9)
    assert res.arrival_time == pytest.approx(1 * NS, abs=1e-15)


def test_lsf3_odd_noise_keeps_arrival(ramp):
    def odd(t):
        s = t - RAMP_T50
        return np.where(np.abs(s) <= 80 * PS, 0.05 * np.sin(2 * np.pi * s / (160 * PS)), 0.0)
    res = fit_lsf3(with_noise(ramp, odd))
    assert res.arrival_time == pytest.approx(RAMP_T50, abs=0.01 * PS)


# ==================== E4 ====================
def test_e4_staircase():
    wf = SampledWaveform.from_pairs([(0, 0), (1.0e-9, 0), (1.1e-9, 0.9), (1.5e-9, 0.9),
                                     (1.6e-9, 1.2), (2.0e-9, 1.2)], VDD)
    res = fit_e4(wf)
    assert res.diagnostics.objective == pytest.approx(0.15e-9, rel=1e-9)
    assert res.gamma.a == pytest.approx(1.2e9, rel=1e-9)
    assert fitters.clamped_area(wf, wf.t[0]) >= res.diagnostics.objective


def test_e4_ignores_overshoot():
    clean = SampledWaveform.from_pairs([(0, 0), (1e-9, 1.2), (2e-9, 1.2)], VDD)
    over = SampledWaveform.from_pairs([(0, 0), (1e-9, 1.2), (1.2e-9, 1.4), (1.4e-9, 1.2), (2e-9, 1.2)], VDD)
    assert fit_e4(over).gamma.a == pytest.approx(fit_e4(clean).gamma.a, rel=1e-12)
    assert fit_e4(clean).gamma.a == pytest.approx(1.2e9, rel=1e-9)


def test_e4_zero_area(monkeypatch, ramp, buffer_ch):
    monkeypatch.setattr(fitters, "clamped_area", lambda wf, t_x: 0.0)
    res = fit_e4(ramp, buffer_ch)
    assert res.diagnostics.fallback == "p1-slope"
    assert res.gamma.a == pytest.approx(RAMP_SLOPE, rel=1e-6)
    with pytest.raises(DegenerateAreaError):
        fit_e4(ramp)


# ==================== WLS5 ====================
def test_wls5_with_unit_weights_matches_lsf3(ramp, buffer_ch):
    noisy = with_noise(ramp, triangle(RAMP_T50, 30 * PS, 0.1))
    w = fit_wls5(noisy, buffer_ch)
    u = fit_lsf3(noisy)
    assert w.gamma.a == pytest.approx(u.gamma.a, rel=1e-9)
    assert w.arrival_time == pytest.approx(u.arrival_time, abs=1e-15)
    assert not w.diagnostics.blind_spot


def test_blind_spot(ramp, buffer_ch):
    # dip between the noiseless and noisy region ends: WLS5 never samples it, SGDP does
    noisy = with_noise(ramp, triangle(391 * PS, 8 * PS, -0.3))
    clean_w, noisy_w = fit_wls5(ramp, buffer_ch), fit_wls5(noisy, buffer_ch)
    assert noisy_w.gamma.a == clean_w.gamma.a
    assert noisy_w.gamma.b == clean_w.gamma.b
    assert noisy_w.diagnostics.blind_spot

    clean_s, noisy_s = fit_sgdp(ramp, buffer_ch), fit_sgdp(noisy, buffer_ch)
    assert abs(noisy_s.arrival_time - clean_s.arrival_time) > 0.1 * PS


@pytest.mark.parametrize("source", ["waveforms", "ramp"])
def test_wls5_ignores_a_glitch_before_the_noiseless_region(source, ramp, buffer_ch):
    # the glitch crosses 0.1*vdd well before the noiseless region starts at 220ps
    ch = dataclasses.replace(buffer_ch, source=source)
    noisy = with_noise(ramp, triangle(150 * PS, 30 * PS, 0.2))
    clean, res = fit_wls5(ramp, ch), fit_wls5(noisy, ch)
    assert res.gamma.a == clean.gamma.a
    assert res.gamma.b == clean.gamma.b
    assert res.diagnostics.window == clean.diagnostics.window
    assert res.diagnostics.blind_spot


# ==================== Optimality ====================
def grid_gap(method, noisy, ch):
    """How far the best point of a 201x201 grid around the fitted line stays above the fit, negative if below"""
    res = fit(method, noisy, ch)
    f = objective_function(method, noisy, ch)
    a0, b0 = res.gamma.a, res.gamma.b
    A, B = np.meshgrid(np.linspace(0.9 * a0, 1.1 * a0, 201), np.linspace(b0 - 0.1 * abs(b0), b0 + 0.1 * abs(b0), 201))
    best = float(f(a0, b0))
    return float(np.min(f(A, B))) - best * (1 - 1e-9) + 1e-18


@pytest.mark.parametrize("method", [Method.LSF3, Method.WLS5, Method.SGDP])
def test_fit_is_the_grid_minimum(method, bumped, power_ch):
    assert grid_gap(method, bumped, power_ch) >= 0


def test_stored_fixtures_are_there():
    assert [p.name for p in STORED] == ["noisy_%d.csv" % i for i in range(1, 6)]


@pytest.mark.parametrize("path", STORED, ids=lambda p: p.stem)
@pytest.mark.parametrize("method", [Method.LSF3, Method.WLS5, Method.SGDP])
def test_stored_fixture_is_the_grid_minimum(method, path, power_ch):
    assert grid_gap(method, read_csv(path), power_ch) >= 0


@pytest.mark.parametrize("path", STORED, ids=lambda p: p.stem)
def test_sgdp_is_stationary_on_stored_fixtures(path, power_ch):
    noisy = read_csv(path)
    settings = FitSettings(param_tol=1e-12)
    res = fit_sgdp(noisy, power_ch, settings)
    assert res.diagnostics.converged
    assert sgdp_gradient_ratio(noisy, power_ch, res, settings) < 1e-6


def test_sgdp_stops_at_a_stationary_point(bumped, power_ch):
    settings = FitSettings(param_tol=1e-12)
    res = fit_sgdp(bumped, power_ch, settings)
    assert res.diagnostics.converged
    assert sgdp_gradient_ratio(bumped, power_ch, res, settings) < 1e-6


def test_sgdp_grid_restart(bumped, power_ch):
    res = fit_sgdp(bumped, power_ch, FitSettings(gauss_newton_max_iters=1))
    assert res.diagnostics.fallback == "grid"
    res = fit_sgdp(bumped, power_ch, FitSettings(gauss_newton_max_iters=1, grid_fallback=False))
    assert res.diagnostics.fallback is None
    assert not res.diagnostics.converged
    assert res.diagnostics.notes


def test_literal_objective_without_curvature(ramp, buffer_ch):
    res = fit_sgdp(ramp, buffer_ch, FitSettings(sgdp_objective="literal"))
    assert res.diagnostics.fallback == "weighted-ls"
    assert res.arrival_time == pytest.approx(RAMP_T50, abs=0.01 * PS)


def moved_ch(ch, dt):
    """The same characterization with its time origin moved by dt"""
    return dataclasses.replace(
        ch, v_in_ref=ch.v_in_ref.shifted(dt), v_out_ref=ch.v_out_ref.shifted(dt),
        rho_t=SensitivityProfile(ch.rho_t.t + dt, ch.rho_t.rho),
        region=CriticalRegion(ch.region.t_first + dt, ch.region.t_last + dt, ch.region.kind))


@pytest.mark.parametrize("method", ALL_METHODS)
def test_fits_follow_a_time_shift(method, bumped, buffer_ch):
    delta = 100 * PS
    here = fit(method, bumped, buffer_ch)
    moved = fit(method, bumped.shifted(delta), moved_ch(buffer_ch, delta))
    assert moved.arrival_time == pytest.approx(here.arrival_time + delta, abs=1e-3 * PS)
    assert moved.gamma.a == pytest.approx(here.gamma.a, rel=1e-6)


@pytest.mark.parametrize("method", [Method.WLS5, Method.SGDP])
def test_ramp_characterization_follows_the_input_alone(method, bumped, buffer_ch):
    delta = 100 * PS
    ch = dataclasses.replace(buffer_ch, source="ramp")
    here = fit(method, bumped, ch)
    moved = fit(method, bumped.shifted(delta), ch)
    assert moved.arrival_time == pytest.approx(here.arrival_time + delta, abs=1e-3 * PS)
    assert moved.gamma.a == pytest.approx(here.gamma.a, rel=1e-6)


def test_characterization_placement_does_not_matter(bumped, buffer_ch):
    # ramp characterizations are placed by matching latest 0.5*vdd crossings
    here = dataclasses.replace(buffer_ch, source="ramp")
    early = dataclasses.replace(moved_ch(buffer_ch, -150 * PS), source="ramp")
    assert fit_wls5(bumped, early).arrival_time == pytest.approx(fit_wls5(bumped, here).arrival_time,
                                                                 abs=1e-3 * PS)
    assert fit_sgdp(bumped, early).arrival_time == pytest.approx(fit_sgdp(bumped, here).arrival_time,
                                                                 abs=1e-3 * PS)


# ==================== Sensitivity map ====================
def test_rho_eff_is_zero_outside_the_band(ramp, buffer_ch):
    noisy = with_noise(ramp, triangle(RAMP_T50, 30 * PS, -0.56))
    prof = rho_eff_map(noisy, buffer_ch)
    assert len(prof.t) == 35
    assert prof.t[17] == pytest.approx(RAMP_T50, abs=1e-18)
    assert prof.rho[17] == 0.0
    assert prof.rho[10] == 1.0


def test_rho_eff_follows_voltage_not_time(ramp, power_ch):
    stretched = saturated_ramp(200 * PS, 2 * RAMP_SLEW, 1200 * PS, 1 * PS, VDD)
    a = rho_eff_map(ramp, power_ch)
    b = rho_eff_map(stretched, power_ch)
    np.testing.assert_allclose(b.rho, a.rho, rtol=0, atol=1e-9)
    assert b.t[-1] - b.t[0] == pytest.approx(2 * (a.t[-1] - a.t[0]))


# ==================== Output reconstruction ====================
def test_first_order_output_without_noise(ramp, buffer_ch):
    gamma = fit_lsf3(ramp).gamma
    out = predict_output_first_order(buffer_ch, gamma, ramp)
    np.testing.assert_allclose(out.v, ramp.sample_at(out.t), rtol=0, atol=1e-9)


def test_first_order_output_tracks_a_level_shift(ramp, buffer_ch):
    gamma = fit_lsf3(ramp).gamma
    raised = LinearWaveform(gamma.a, gamma.b + 0.01, VDD)
    base = predict_output_first_order(buffer_ch, gamma, ramp)
    out = predict_output_first_order(buffer_ch, raised, ramp)
    np.testing.assert_allclose((out.v - base.v)[1:-1], 0.01, rtol=0, atol=1e-9)


def test_first_order_output_of_an_inverting_gate(ramp):
    ch = build_characterization(ramp, SampledWaveform(ramp.t, VDD - ramp.v, VDD, Direction.FALLING))
    assert ch.polarity == -1
    gamma = fit_lsf3(ramp).gamma
    raised = LinearWaveform(gamma.a, gamma.b + 0.01, VDD)
    base = predict_output_first_order(ch, gamma, ramp)
    out = predict_output_first_order(ch, raised, ramp)
    np.testing.assert_allclose((out.v - base.v)[1:-1], -0.01, rtol=0, atol=1e-9)


# ==================== Dispatch ====================
@pytest.mark.parametrize("method", ["p1", "wls5", "sgdp"])
def test_noiseless_methods_need_a_characterization(method, ramp):
    with pytest.raises(ConfigError):
        fit(method, ramp, None)


def test_unknown_method(ramp):
    with pytest.raises(ConfigError):
        fit("p7", ramp, None)
    with pytest.raises(ConfigError):
        objective_function("p2", ramp, None)


@pytest.mark.parametrize("kw", [{"sample_count": 3}, {"sample_count": 4.5}, {"sgdp_objective": "cubic"},
                                {"gauss_newton_max_iters": 0}, {"param_tol": 0.0}])
def test_settings_validation(kw):
    with pytest.raises(ConfigError):
        FitSettings(**kw)


def test_settings_replace():
    s = FitSettings().replace(sample_count=12)
    assert s.sample_count == 12
    assert s.sgdp_objective == FitSettings().sgdp_objective


def test_sample_count_is_recorded(bumped, buffer_ch):
    res = fit_sgdp(bumped, buffer_ch, FitSettings(sample_count=12))
    assert res.diagnostics.samples == 12
    d = res.to_dict()
    assert d["method"] == "SGDP"
    assert d["arrival_s"] == res.arrival_time
    assert d["diagnostics"]["samples"] == 12
