import argparse
import json
import logging
import pathlib
import sys

from core import ConfigError, Direction, Method, NoisyStaError, FF, PS, resolved_defaults
from core import RECEIVER_LOAD, DT, VDD
from util import atomic_write_text
import characterize
import fitters
import oracle
import sweep
import waveform

logger = logging.getLogger("noisy_sta")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError("%s: error: %s" % (self.prog, message))


# ==================== Path checks ====================
def _input_file(path: pathlib.Path) -> pathlib.Path:
    if not path.is_file():
        raise UsageError("input file not found: %s" % path)
    return path


def _output_file(path: pathlib.Path | None) -> pathlib.Path | None:
    if path is not None and not path.parent.absolute().is_dir():
        raise UsageError("output directory does not exist: %s" % path.parent)
    return path


def _emit(text: str, path: pathlib.Path | None):
    if path is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)
        logger.info("wrote %s", path)


def _methods(text: str) -> tuple[Method, ...]:
    if text.strip().lower() == "all":
        return tuple(Method)
    try:
        return tuple(Method.parse(m.strip()) for m in text.split(",") if m.strip())
    except ConfigError as e:
        raise UsageError(str(e)) from None


def _settings(ns):
    kw = {}
    if getattr(ns, "samples", None) is not None:
        kw["sample_count"] = ns.samples
    if getattr(ns, "sgdp_objective", None) is not None:
        kw["sgdp_objective"] = ns.sgdp_objective
    return fitters.FitSettings().replace(**kw)


# ==================== Subcommands ====================
def cmd_characterize(ns) -> int:
    out = _output_file(ns.out)
    if ns.config is not None:
        spec = sweep.load_sweep_spec(_input_file(ns.config))
        if ns.from_victim:
            ch, _ = sweep.characterize_sweep(spec)
        else:
            ch = characterize.characterize_noiseless(spec.circuit.receiver, spec.victim.slew_10_90,
                                                     spec.circuit.receiver_load, spec.victim.direction,
                                                     spec.circuit.dt)
    else:
        model = oracle.InverterModel(drive_strength=ns.drive, stages=ns.stages)
        ch = characterize.characterize_noiseless(model, ns.slew_ps * PS, ns.load_ff * FF,
                                                 Direction.parse(ns.direction), ns.dt_ps * PS)
    logger.info("delta %.3f ps, overlap %s", ch.delta / PS, ch.overlap)
    _emit(characterize.dumps(ch), out)
    return EXIT_OK


def cmd_fit(ns) -> int:
    out = _output_file(ns.out)
    dump = _output_file(ns.dump_vout)
    if ns.char is None and Method.parse(ns.method) in (Method.P1, Method.WLS5, Method.SGDP):
        raise UsageError("--char is required for method %s" % ns.method)
    if dump is not None and ns.char is None:
        raise UsageError("--dump-vout needs --char")
    ch = characterize.load(_input_file(ns.char)) if ns.char is not None else None
    noisy = waveform.read_csv(_input_file(ns.input), vdd=ch.vdd if ch is not None else VDD)
    settings = _settings(ns)
    res = fitters.fit(ns.method, noisy, ch, settings)
    _emit(json.dumps(res.to_dict(), indent=4) + "\n", out)
    if dump is not None:
        v_out = fitters.predict_output_first_order(ch, res.gamma, noisy, settings)
        atomic_write_text(dump, waveform.write_csv(v_out))
    return EXIT_OK


def _node_file(node: str) -> str:
    return node.replace(":", "_") + ".csv"


def cmd_simulate(ns) -> int:
    spec = sweep.load_sweep_spec(_input_file(ns.config))
    out_dir = ns.out_dir
    if not out_dir.is_dir():
        raise UsageError("output directory does not exist: %s" % out_dir)
    cfg = spec.circuit
    nodes = ns.node or [cfg.victim_far_end, oracle.RECEIVER_OUTPUT]
    cfg = cfg.replace(observed=tuple(nodes))
    if ns.uncoupled:
        cfg = cfg.replace(couplings=())
    offset = ns.offset_ps * PS
    waves = oracle.simulate(oracle.build_circuit(cfg), spec.stimuli((offset,) * max(len(spec.aggressors), 1)))
    for node in nodes:
        atomic_write_text(out_dir / _node_file(node), waveform.write_csv(waves[node]))
    delay = oracle.measure_gate_delay(waves[cfg.victim_far_end], waves[oracle.RECEIVER_OUTPUT])
    print("gate delay %.3f ps" % (delay / PS))
    return EXIT_OK


def _load_specs(ns):
    specs = []
    for name in ns.builtin or []:
        build = sweep.build_config_i if name == "i" else sweep.build_config_ii
        specs.append(build())
    for path in ns.config or []:
        specs.append(sweep.load_sweep_spec(_input_file(path)))
    if not specs:
        raise UsageError("sweep needs at least one --config or --builtin")
    out = []
    for spec in specs:
        kw = {"settings": _settings(ns)}
        if ns.methods is not None:
            kw["methods"] = _methods(ns.methods)
        if ns.independent_offsets:
            kw["independent_offsets"] = True
        spec = spec.replace(**kw)
        if ns.count is not None:
            spec = spec.with_count(ns.count)
        out.append(spec.uncoupled() if ns.uncoupled else spec)
    return out


def _csv_path(base: pathlib.Path, name: str, many: bool) -> pathlib.Path:
    if not many:
        return base
    return base.with_name("%s-%s%s" % (base.stem, name, base.suffix))


def cmd_sweep(ns) -> int:
    out = _output_file(ns.out)
    csv_base = _output_file(ns.csv)
    specs = _load_specs(ns)
    stats_by_config = {}
    notes = []
    for spec in specs:
        ch, waves = sweep.characterize_sweep(spec)
        results = sweep.run_sweep(spec, ch, ns.workers)
        st = sweep.stats(results, spec.methods)
        stats_by_config[spec.name] = st
        failed = sum(1 for r in results if r.failure)
        if failed:
            notes.append("%s: %d of %d cases failed in the reference simulation" % (spec.name, failed, len(results)))
        verdict = sweep.ordering_violations(st)
        notes.append("%s ranking: %s" % (spec.name, "holds" if not verdict else "violated (%s)" % "; ".join(verdict)))
        if csv_base is not None:
            path = _csv_path(csv_base, spec.name, len(specs) > 1)
            atomic_write_text(path, sweep.write_cases_csv(results, spec.methods, spec.independent_offsets))
            logger.info("wrote %s", path)
        if ns.timing:
            noisy = waves[spec.circuit.victim_far_end]
            timing = sweep.time_fits(noisy, ch, spec.settings, ns.timing_repeats, spec.methods)
            notes.append("%s median fit time: %s" % (
                spec.name, ", ".join("%s %.1f us" % (m.value, t * 1e6) for m, t in timing.items())))
    settings = specs[0].settings
    title = "Delay error (ps), P = %d, SGDP objective %s" % (settings.sample_count, settings.sgdp_objective)
    _emit(sweep.emit_report(stats_by_config, ns.format, title, notes), out)
    return EXIT_OK


def cmd_report(ns) -> int:
    out = _output_file(ns.out)
    if ns.defaults:
        _emit(json.dumps(resolved_defaults(), indent=4) + "\n", out)
        return EXIT_OK
    if not ns.cases:
        raise UsageError("report needs --defaults or at least one --cases file")
    stats_by_config = {}
    notes = []
    for path in ns.cases:
        results = sweep.read_cases_csv(_input_file(path))
        st = sweep.stats(results)
        stats_by_config[path.stem] = st
        verdict = sweep.ordering_violations(st)
        notes.append("%s ranking: %s" % (path.stem, "holds" if not verdict else "violated (%s)" % "; ".join(verdict)))
    _emit(sweep.emit_report(stats_by_config, ns.format, "Delay error (ps)", notes), out)
    return EXIT_OK


# ==================== Parser ====================
def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="noisy-sta",
        description="Equivalent linear waveforms for crosstalk-distorted transitions, and their gate delay error",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="errors only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("characterize", help="noiseless receiver characterization to JSON")
    p.add_argument("-c", "--config", type=pathlib.Path, help="experiment file, uses its receiver and victim slew")
    p.add_argument("--from-victim", action="store_true", help="characterize on the uncoupled victim far end")
    p.add_argument("--drive", type=float, default=4.0)
    p.add_argument("--stages", type=int, default=1)
    p.add_argument("--slew-ps", type=float, default=150.0)
    p.add_argument("--load-ff", type=float, default=RECEIVER_LOAD / FF)
    p.add_argument("--direction", choices=[d.value for d in Direction], default="rising")
    p.add_argument("--dt-ps", type=float, default=DT / PS)
    p.add_argument("-o", "--out", type=pathlib.Path)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("fit", help="fit one noisy waveform CSV")
    p.add_argument("-m", "--method", required=True, type=str.lower, choices=[m.value.lower() for m in Method])
    p.add_argument("--char", type=pathlib.Path, help="characterization JSON")
    p.add_argument("-i", "--in", dest="input", required=True, type=pathlib.Path, help="waveform CSV")
    p.add_argument("--samples", type=int, help="sampling points P")
    p.add_argument("--sgdp-objective", choices=["squared", "literal"])
    p.add_argument("--dump-vout", type=pathlib.Path, help="write the first order output reconstruction CSV")
    p.add_argument("-o", "--out", type=pathlib.Path)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="one reference simulation, node waveforms to CSV")
    p.add_argument("-c", "--config", required=True, type=pathlib.Path)
    p.add_argument("--offset-ps", type=float, default=0.0, help="aggressor offset")
    p.add_argument("--node", action="append", help="node id to write, repeatable")
    p.add_argument("--uncoupled", action="store_true")
    p.add_argument("-d", "--out-dir", type=pathlib.Path, default=pathlib.Path("."))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="aggressor alignment sweep and delay error table")
    p.add_argument("-c", "--config", action="append", type=pathlib.Path, help="experiment file, repeatable")
    p.add_argument("--builtin", action="append", choices=["i", "ii"], help="built-in configuration, repeatable")
    p.add_argument("--methods", help="'all' or a comma separated list")
    p.add_argument("--count", type=int, help="number of offsets, spread over the experiment's own window")
    p.add_argument("--samples", type=int, help="sampling points P")
    p.add_argument("--sgdp-objective", choices=["squared", "literal"])
    p.add_argument("--independent-offsets", action="store_true")
    p.add_argument("--uncoupled", action="store_true", help="remove all coupling capacitance")
    p.add_argument("--workers", type=int, help="worker processes, overrides NOISY_STA_THREADS")
    p.add_argument("--timing", action="store_true", help="append median fit times")
    p.add_argument("--timing-repeats", type=int, default=1000)
    p.add_argument("-f", "--format", choices=["plain", "markdown"], default="plain")
    p.add_argument("-o", "--out", type=pathlib.Path, help="report file")
    p.add_argument("--csv", type=pathlib.Path, help="per-case CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="defaults, or error tables from stored case CSVs")
    p.add_argument("--defaults", action="store_true")
    p.add_argument("--cases", action="append", type=pathlib.Path, help="cases CSV, repeatable")
    p.add_argument("-f", "--format", choices=["plain", "markdown"], default="plain")
    p.add_argument("-o", "--out", type=pathlib.Path)
    p.set_defaults(func=cmd_report)

    lines = ["subcommand flags:"]
    for name, sp in sub.choices.items():
        flags = [s for a in sp._actions for s in a.option_strings if s not in ("-h", "--help")]
        lines.append("  %-13s %s" % (name, " ".join(flags)))
    parser.epilog = "\n".join(lines) + "\n\nNOISY_STA_THREADS caps sweep worker processes."
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_USAGE

    level = logging.DEBUG if ns.verbose else logging.ERROR if ns.quiet else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        return ns.func(ns)
    except UsageError as e:
        print("noisy-sta: error: %s" % e, file=sys.stderr)
        return EXIT_USAGE
    except NoisyStaError as e:
        print("noisy-sta: %s: %s" % (type(e).__name__, e), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
