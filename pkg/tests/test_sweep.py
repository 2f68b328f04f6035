import json
import pathlib

import numpy as np
import pytest

import sweep
from conftest import VDD, RAMP_T50, TINY_EXPERIMENT, with_noise, triangle
from core import ConfigError, Direction, FitError, Method, FF, NS, PS, RECEIVER_LOAD
from fitters import FitSettings
from oracle import InverterModel, build_circuit, simulate_receiver
from sweep import (CaseResult, MethodOutcome, MethodStats, build_config_i, build_config_ii,
                   sweep_offsets, load_sweep_spec, characterize_sweep, run_case, run_sweep, stats,
                   ordering_violations, ordering_holds, emit_report, write_cases_csv, read_cases_csv,
                   propagate_chain, time_fits, worker_count)
from waveform import SampledWaveform, arrival_time, last_crossing, saturated_ramp


def case(offset, oracle, **errors):
    outcomes = {Method.parse(m): MethodOutcome(None, None if e is None else oracle + e, e)
                for m, e in errors.items()}
    return CaseResult((offset,), oracle, outcomes)


# ==================== Experiment builders ====================
def test_config_i_geometry():
    spec = build_config_i(count=5)
    y = spec.circuit.line("y")
    assert y.segments == 100
    assert y.r_total == pytest.approx(850.0)
    assert y.c_total == pytest.approx(480 * FF)
    assert build_circuit(spec.circuit).coupling_per_segment("x", "y") == pytest.approx(1 * FF)
    assert spec.aggressors[0].direction is Direction.FALLING
    assert spec.circuit.receiver.drive_strength == 4


def test_config_ii_geometry():
    spec = build_config_ii(count=5)
    circuit = build_circuit(spec.circuit)
    for lid in ("x1", "y", "x2"):
        line = spec.circuit.line(lid)
        assert line.r_total == pytest.approx(425.0)
        assert line.c_total == pytest.approx(240 * FF)
    assert circuit.coupling_per_segment("x1", "y") == pytest.approx(2 * FF)
    assert circuit.coupling_per_segment("x2", "y") == pytest.approx(2 * FF)
    assert len(spec.aggressors) == 2


def test_same_direction_aggressors():
    spec = build_config_i(count=3, aggressor_direction="same")
    assert spec.aggressors[0].direction is Direction.RISING
    with pytest.raises(ConfigError):
        build_config_i(count=3, aggressor_direction="sideways")


def test_offsets_span_the_window():
    offsets = sweep_offsets()
    assert len(offsets) == 200
    assert offsets[0] == pytest.approx(-0.5 * NS)
    assert offsets[-1] == pytest.approx(0.5 * NS)
    np.testing.assert_allclose(np.diff(offsets), 1 * NS / 199, rtol=1e-9)
    assert sweep_offsets(1, center=3 * PS) == (3 * PS,)
    with pytest.raises(ConfigError):
        sweep_offsets(0)


def test_cases():
    assert build_config_i(count=3).cases() == [(x,) for x in sweep_offsets(3)]
    common = build_config_ii(count=3).cases()
    assert len(common) == 3 and all(a == b for a, b in common)
    assert len(build_config_ii(count=3, independent_offsets=True).cases()) == 9


def test_spec_validation():
    spec = build_config_i(count=3)
    with pytest.raises(ConfigError):
        spec.replace(offsets=(1.0, 0.0))
    with pytest.raises(ConfigError):
        spec.replace(methods=())
    with pytest.raises(ConfigError):
        spec.replace(circuit=spec.circuit.replace(receiver=None))
    with pytest.raises(ConfigError):
        spec.replace(offsets=(0.0, 10 * NS))


def test_uncoupled_drops_couplings():
    spec = build_config_ii(count=3).uncoupled()
    assert spec.circuit.couplings == ()
    assert spec.name == "config-ii-uncoupled"


def test_experiment_file(tiny_experiment):
    spec = load_sweep_spec(tiny_experiment)
    assert spec.name == "tiny"
    assert spec.offsets == pytest.approx((-100 * PS, 0.0, 100 * PS))
    assert spec.methods == tuple(Method)
    assert spec.victim.start_time == pytest.approx(300 * PS)
    assert spec.aggressors[0].source == "x"
    assert spec.aggressors[0].direction is Direction.FALLING


def test_new_count_keeps_the_window(tiny_experiment):
    spec = load_sweep_spec(tiny_experiment).with_count(5)
    assert spec.offsets == pytest.approx((-100 * PS, -50 * PS, 0.0, 50 * PS, 100 * PS))
    assert spec.uncoupled().with_count(2).offsets == pytest.approx((-100 * PS, 100 * PS))
    assert build_config_i(count=3, window=0.4 * NS).with_count(3).offsets == pytest.approx((-0.2 * NS, 0.0, 0.2 * NS))


def test_experiment_files_shipped():
    root = pathlib.Path(__file__).parent.parent / "configs"
    one = load_sweep_spec(root / "config_i.json")
    two = load_sweep_spec(root / "config_ii.json")
    assert len(one.offsets) == 200 and len(two.offsets) == 200
    assert one.circuit.line("y").r_total == pytest.approx(850.0)
    assert [a.source for a in two.aggressors] == ["x1", "x2"]


def test_bad_experiment_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"lines": []', encoding="u8")
    with pytest.raises(ConfigError):
        load_sweep_spec(path)


# ==================== Running ====================
@pytest.fixture(scope="module")
def tiny_spec(tmp_path_factory):
    path = tmp_path_factory.mktemp("exp") / "tiny.json"
    path.write_text(json.dumps(TINY_EXPERIMENT), encoding="u8")
    return load_sweep_spec(path)


@pytest.fixture(scope="module")
def tiny_results(tiny_spec):
    return run_sweep(tiny_spec, workers=1)


def test_every_case_is_scored(tiny_spec, tiny_results):
    assert [r.offsets for r in tiny_results] == tiny_spec.cases()
    for r in tiny_results:
        assert r.failure is None
        assert r.oracle_delay > 0
        for m in tiny_spec.methods:
            o = r.outcomes[m]
            assert o.failure is None
            assert o.error == pytest.approx(o.predicted_delay - r.oracle_delay, abs=1e-21)


def test_uncoupled_victim_is_predicted_exactly(tiny_spec):
    results = run_sweep(tiny_spec.uncoupled(), workers=1)
    for r in results:
        for m in tiny_spec.methods:
            assert abs(r.outcomes[m].error) < 1 * PS
    first = results[0]
    for r in results[1:]:
        assert r.oracle_delay == pytest.approx(first.oracle_delay, abs=1e-18)
        for m in tiny_spec.methods:
            assert r.outcomes[m].error == pytest.approx(first.outcomes[m].error, abs=1e-18)


def test_oracle_delay_does_not_depend_on_methods(tiny_spec):
    ch, _ = characterize_sweep(tiny_spec)
    full = run_case(tiny_spec, ch, (0.0,))
    only_p2 = run_case(tiny_spec.replace(methods=(Method.P2,)), ch, (0.0,))
    assert only_p2.oracle_delay == full.oracle_delay
    assert list(only_p2.outcomes) == [Method.P2]


def test_sweep_characterization_comes_from_the_victim(tiny_spec):
    ch, waves = characterize_sweep(tiny_spec)
    assert ch.source == "victim"
    assert ch.load == tiny_spec.circuit.receiver_load
    assert ch.overlap
    np.testing.assert_array_equal(ch.v_in_ref.v, waves[tiny_spec.circuit.victim_far_end].v)


def test_sweep_is_deterministic(tiny_spec, tiny_results):
    again = run_sweep(tiny_spec, workers=1)
    parallel = run_sweep(tiny_spec, workers=2)
    for a, b, c in zip(tiny_results, again, parallel):
        assert a.offsets == b.offsets == c.offsets
        assert a.oracle_delay == b.oracle_delay == c.oracle_delay
        for m in tiny_spec.methods:
            assert a.outcomes[m].error == b.outcomes[m].error == c.outcomes[m].error


def test_ten_offset_cases_file_is_reproduced(tmp_path, tiny_spec):
    spec = tiny_spec.with_count(10)
    golden = tmp_path / "golden.csv"
    golden.write_text(write_cases_csv(run_sweep(spec, workers=1), spec.methods), encoding="u8")
    again = run_sweep(spec, workers=2)
    assert write_cases_csv(again, spec.methods) == golden.read_text(encoding="u8")
    stored = read_cases_csv(golden)
    assert [r.offsets for r in stored] == [r.offsets for r in again]
    for a, b in zip(stored, again):
        assert a.oracle_delay == b.oracle_delay
        for m in spec.methods:
            assert a.outcomes[m].error == b.outcomes[m].error


def test_worker_count(monkeypatch):
    monkeypatch.setenv(sweep.THREADS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(sweep.THREADS_ENV, "0")
    with pytest.raises(ConfigError):
        worker_count()
    monkeypatch.setenv(sweep.THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        worker_count()
    monkeypatch.delenv(sweep.THREADS_ENV)
    assert worker_count() >= 1


# ==================== Statistics ====================
def test_stats_of_two_cases():
    results = [case(0.0, 50 * PS, sgdp=3 * PS), case(1 * PS, 60 * PS, sgdp=-5 * PS)]
    (s,) = stats(results)
    assert s.method is Method.SGDP
    assert s.max_abs_error == pytest.approx(5 * PS)
    assert s.avg_abs_error == pytest.approx(4 * PS)
    assert s.count == 2 and s.failures == 0


def test_stats_of_one_case():
    (s,) = stats([case(0.0, 50 * PS, p2=-2 * PS)])
    assert s.max_abs_error == s.avg_abs_error == pytest.approx(2 * PS)


def test_stats_ignore_case_order():
    results = [case(i * PS, 50 * PS, lsf3=e * PS) for i, e in enumerate([1.5, -7.0, 0.25, 3.0])]
    assert stats(results) == stats(results[::-1])


def test_stats_count_failures():
    results = [case(0.0, 50 * PS, e4=2 * PS), case(1 * PS, 50 * PS, e4=None)]
    (s,) = stats(results)
    assert s.count == 1 and s.failures == 1
    with pytest.raises(ConfigError):
        stats([])


def test_ordering():
    good = [MethodStats(Method.SGDP, 5 * PS, 1 * PS, 10), MethodStats(Method.WLS5, 6 * PS, 2 * PS, 10),
            MethodStats(Method.P1, 9 * PS, 4 * PS, 10)]
    assert ordering_holds(good)
    bad = good[:2] + [MethodStats(Method.P2, 3 * PS, 1.5 * PS, 10)]
    violations = ordering_violations(bad)
    assert len(violations) == 1 and violations[0].startswith("WLS5")


# ==================== Reports ====================
def example_stats():
    return {"config-i": [MethodStats(Method.P2, 12.34 * PS, 5.0 * PS, 200),
                         MethodStats(Method.SGDP, 2.0 * PS, 0.96 * PS, 200)],
            "config-ii": [MethodStats(Method.SGDP, 3.0 * PS, 1.04 * PS, 200)]}


def test_plain_report():
    lines = emit_report(example_stats()).splitlines()
    assert lines[0] == "Method\tconfig-i Max\tconfig-i Avg\tconfig-ii Max\tconfig-ii Avg"
    assert lines[1] == "P2\t12.3\t5.0\t-\t-"
    assert lines[2] == "SGDP\t2.0\t1.0\t3.0\t1.0"


def test_markdown_report():
    text = emit_report(example_stats(), "markdown", title="Delay error (ps)", notes=("scaled oracle",))
    lines = text.splitlines()
    assert lines[0] == "## Delay error (ps)"
    assert lines[2] == "| Method | config-i Max | config-i Avg | config-ii Max | config-ii Avg |"
    assert lines[3] == "|---|---|---|---|---|"
    assert lines[5] == "| SGDP | 2.0 | 1.0 | 3.0 | 1.0 |"
    assert lines[-1] == "scaled oracle"


def test_report_layout_of_published_numbers():
    def pair(m, i_max, i_avg, ii_max, ii_avg):
        return MethodStats(m, i_max * PS, i_avg * PS, 200), MethodStats(m, ii_max * PS, ii_avg * PS, 200)

    wls5 = pair(Method.WLS5, 42.4, 10.3, 49.3, 17.4)
    sgdp = pair(Method.SGDP, 38.3, 9.2, 44.5, 14.8)
    text = emit_report({"I": [wls5[0], sgdp[0]], "II": [wls5[1], sgdp[1]]})
    assert "WLS5\t42.4\t10.3\t49.3\t17.4" in text.splitlines()
    assert "SGDP\t38.3\t9.2\t44.5\t14.8" in text.splitlines()


def test_report_format_is_checked():
    with pytest.raises(ConfigError):
        emit_report(example_stats(), "html")


def test_cases_csv(tmp_path, tiny_spec, tiny_results):
    path = tmp_path / "cases.csv"
    path.write_text(write_cases_csv(tiny_results, tiny_spec.methods), encoding="u8")
    header = path.read_text(encoding="u8").splitlines()[0].split(",")
    assert header[:4] == ["offset_s", "oracle_delay_s", "P1_predicted_delay_s", "P1_error_s"]
    back = read_cases_csv(path)
    assert len(back) == len(tiny_results)
    for a, b in zip(tiny_results, back):
        assert a.offsets == b.offsets
        assert a.oracle_delay == b.oracle_delay
        for m in tiny_spec.methods:
            assert a.outcomes[m].error == b.outcomes[m].error
    assert stats(back) == stats(tiny_results)


def test_cases_csv_is_recognized(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n", encoding="u8")
    with pytest.raises(ConfigError):
        read_cases_csv(path)


# ==================== Chains ====================
CHAIN_RAMP = saturated_ramp(200 * PS, 150 * PS, 1500 * PS, 0.1 * PS, VDD)


def test_two_stage_chain_matches_direct_simulation():
    stages = [InverterModel(drive_strength=4), InverterModel(drive_strength=4)]
    chain = propagate_chain(stages, CHAIN_RAMP, "sgdp", dt=0.1 * PS)
    out = simulate_receiver(stages[0], CHAIN_RAMP, stages[1].input_capacitance)[-1]
    out = simulate_receiver(stages[1], out, RECEIVER_LOAD)[-1]
    assert chain.arrival == pytest.approx(last_crossing(out, 0.6), abs=1 * PS)
    assert len(chain.fits) == 2
    assert chain.outputs[0].direction is Direction.FALLING
    assert chain.outputs[1].direction is Direction.RISING


def test_chain_without_characterization():
    stages = [InverterModel(drive_strength=4)]
    chain = propagate_chain(stages, CHAIN_RAMP, Method.LSF3)
    assert chain.fits[0].method is Method.LSF3
    assert chain.arrival > arrival_time(CHAIN_RAMP)


def test_chain_errors():
    with pytest.raises(ConfigError):
        propagate_chain([], CHAIN_RAMP, "p2")
    with pytest.raises(ConfigError):
        propagate_chain([InverterModel()], CHAIN_RAMP, "p2", loads=[1 * FF, 2 * FF])
    half = SampledWaveform(CHAIN_RAMP.t, 0.5 * CHAIN_RAMP.v, VDD)
    with pytest.raises(FitError, match="chain stage 0"):
        propagate_chain([InverterModel()], half, "sgdp")


# ==================== Full experiments ====================
def test_sgdp_tracks_two_aggressors():
    # late dips from both aggressors used to pull the unsaturated line far below the rail
    spec = build_config_ii(count=7, methods=(Method.P2, Method.WLS5, Method.SGDP))
    by_method = {s.method: s for s in stats(run_sweep(spec, workers=1))}
    sgdp = by_method[Method.SGDP]
    assert sgdp.failures == 0
    assert sgdp.max_abs_error < 20 * PS
    assert sgdp.avg_abs_error <= by_method[Method.P2].avg_abs_error


@pytest.mark.slow
@pytest.mark.parametrize("builder", [build_config_i, build_config_ii])
def test_sgdp_ranks_first(builder):
    results = run_sweep(builder())
    method_stats = stats(results)
    assert ordering_holds(method_stats), ordering_violations(method_stats)


@pytest.mark.slow
def test_one_fit_takes_under_a_millisecond(ramp, inverter_ch):
    noisy = with_noise(ramp, triangle(RAMP_T50, 40 * PS, 0.1))
    timings = time_fits(noisy, inverter_ch, FitSettings(sample_count=35), repeats=1000)
    for m, t in timings.items():
        assert t < 1e-3, m
