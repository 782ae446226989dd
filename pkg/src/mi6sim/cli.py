"""Command-line front end: ``mi6sim simulate``, ``mi6sim verify`` and ``mi6sim sweep``.

Exit codes: 0 success, 1 config error or failed verification, 2 trace or
schedule error, 3 simulation invariant abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import FULL_CONFIG, SECURE, ConfigError, SimConfig, Variant, load_config, validate_config
from .engine import SimulationAbort
from .machine import Machine
from .monitor import Monitor, MonitorError, ScheduleError, load_schedule
from .trace import TraceError, load_trace

EXIT_OK, EXIT_CONFIG, EXIT_TRACE, EXIT_ABORT = 0, 1, 2, 3
SUITES = ("noninterference", "witnesses", "coherence", "purge", "primeprobe", "directional", "sizing")


def _err(msg: str):
    print(f"mi6sim: {msg}", file=sys.stderr)


def _config(args) -> tuple[SimConfig, Variant]:
    if args.config:
        try:
            cfg, file_variant = load_config(args.config)
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e.strerror}") from None
    else:
        cfg, file_variant = FULL_CONFIG.replace(llc_mshrs_total=12), None
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    variant = Variant.parse(args.variant) if getattr(args, "variant", None) else (file_variant or Variant.parse("base"))
    return cfg, variant


def parse_trace_specs(specs, n_cores: int, dram_bytes: int) -> dict[int, list]:
    """``core<N>=<path>`` (or ``<N>=<path>``) -> {core: ops}."""
    out = {}
    for spec in specs or ():
        if "=" not in spec:
            raise TraceError(0, 0, f"expected core<N>=<path>, got {spec!r}", "--trace")
        key, path = spec.split("=", 1)
        key = key.strip().lower().removeprefix("core")
        try:
            core = int(key)
        except ValueError:
            raise TraceError(0, 0, f"bad core in {spec!r}", "--trace") from None
        if not 0 <= core < n_cores:
            raise TraceError(0, 0, f"core {core} out of range (machine has {n_cores})", "--trace")
        if core in out:
            raise TraceError(0, 0, f"core {core} given two traces", "--trace")
        out[core] = load_trace(path, dram_bytes)
    return out


# -- simulate ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        cfg, variant = _config(args)
        problems = validate_config(cfg, variant)
        if problems:
            raise ConfigError(problems)
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    try:
        traces = parse_trace_specs(args.trace, cfg.n_cores, cfg.dram_bytes)
        events = load_schedule(args.schedule, cfg.dram_bytes) if args.schedule else []
        if not traces and not events:
            raise TraceError(0, 0, "nothing to run: give --trace or --schedule", "simulate")
    except (TraceError, ScheduleError) as e:
        _err(str(e))
        return EXIT_TRACE

    m = Machine(cfg, variant, log=bool(args.log))
    if args.schedule:
        Monitor(m, events)
    m.load_traces([traces.get(c) for c in range(cfg.n_cores)])
    limit = args.max_cycles
    try:
        m.run(max_cycles=limit + 1, until=lambda: m.all_done() or m.cycle >= limit)
    except MonitorError as e:
        _err(f"schedule error: {e}")
        return EXIT_TRACE
    except SimulationAbort as e:
        _err(f"invariant abort at cycle {e.cycle}: {e}")
        return EXIT_ABORT
    if not m.all_done():
        _err(f"stopped at the cycle limit ({limit}) before every core finished")

    csv_text = m.stats_csv()
    if args.stats:
        Path(args.stats).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    if args.log:
        Path(args.log).write_text(m.log.text(), encoding="utf-8")
    return EXIT_OK


# -- verify ------------------------------------------------------------------------

def _verify(args) -> tuple[bool, list[str], str | None]:
    """Returns (passed, report lines, first failing case)."""
    secure = Variant.parse(args.secure_variant)
    lines = []
    if args.suite == "noninterference":
        from .harness.differential import noninterference_suite

        res = noninterference_suite(args.pairs, args.seed, secure)
        for r in res.results:
            p = r.pair
            status = "equal" if r.equal else f"DIVERGES at {r.first_divergence}"
            lines.append(f"pair seed={p.seed:#x} cores={p.n_cores} victim=core{p.victim_core}: {status}")
        lines.append(f"{len(res.results) - len(res.failures)}/{len(res.results)} pairs equal in {res.seconds:.1f}s")
        first = f"pair seed={res.failures[0].pair.seed:#x}" if res.failures else None
        return res.passed, lines, first
    if args.suite == "witnesses":
        from .harness.witnesses import witness_matrix

        rows = witness_matrix(secure, oversize=args.oversize)
        lines.append(f"{'channel':<18} insecure_diverges secure_diverges result")
        for r in rows:
            lines.append(f"{r.channel:<18} {str(r.insecure_diverges):<17} {str(r.secure_diverges):<15} "
                         f"{'ok' if r.passed else 'FAIL'}")
        bad = [r.channel for r in rows if not r.passed]
        return not bad, lines, bad[0] if bad else None
    if args.suite == "coherence":
        from .harness.coherence import coherence_suite

        results = coherence_suite(args.ops, args.seed, variants=(Variant.parse(args.variant or "base"),))
        for r in results:
            lines.append(f"{r.variant} cores={r.n_cores} ops={r.ops} cycles={r.cycles} "
                         f"mismatches={len(r.mismatches)} directory_problems={len(r.directory_problems)}")
        bad = [r for r in results if not r.passed]
        return not bad, lines, f"cores={bad[0].n_cores}" if bad else None
    if args.suite == "purge":
        from .harness.purge import full_size_stall, purge_check

        stall = full_size_stall()
        r = purge_check(variant=secure, seed=args.seed)
        lines.append(f"full-size geometry stall = {stall} cycles")
        lines.append(f"measured stall = {r.measured_stall}, equal to reset = {r.equal_to_reset}")
        ok = stall == 512 and r.passed
        return ok, lines, None if ok else ("stall" if stall != 512 else "reset equivalence")
    if args.suite == "primeprobe":
        from .harness.primeprobe import detection_rate

        out = {}
        for name in ("base", "part"):
            dets = detection_rate(Variant.parse(name), range(args.seed, args.seed + 20))
            out[name] = dets
            lines.append(f"{name}: detected in {sum(d.detected for d in dets)}/20 instances")
        bad = [f"base seed {d.seed}" for d in out["base"] if not d.detected]
        bad += [f"part seed {d.seed}" for d in out["part"] if d.detected]
        return not bad, lines, bad[0] if bad else None
    if args.suite == "directional":
        from .harness.overhead import directional_checks

        checks = directional_checks()
        for d in checks:
            lines.append(f"{d.name}: {d.metric} base={getattr(d.base, d.metric)} "
                         f"variant={getattr(d.variant, d.metric)} ratio={d.ratio:.3f} {'ok' if d.passed else 'FAIL'}")
        bad = [d.name for d in checks if not d.passed]
        return not bad, lines, bad[0] if bad else None
    if args.suite == "sizing":
        from .harness.sizing import burst, random_load

        safe = random_load(cycles=args.cycles, seed=args.seed)
        over = burst()
        lines.append(f"{safe.mshrs} MSHRs, d_max={safe.dram_max_inflight}: backpressure={safe.backpressure} "
                     f"over {safe.cycles} cycles")
        lines.append(f"{over.mshrs} MSHRs burst: backpressure={over.backpressure}")
        ok = safe.backpressure == 0 and over.backpressure > 0
        return ok, lines, None if ok else ("correct sizing" if safe.backpressure else "oversized burst")
    raise ValueError(args.suite)


def cmd_verify(args) -> int:
    try:
        passed, lines, first = _verify(args)
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    except SimulationAbort as e:
        _err(f"invariant abort at cycle {e.cycle}: {e}")
        return EXIT_ABORT
    for line in lines:
        print(line)
    if passed:
        print(f"{args.suite}: PASS")
        return EXIT_OK
    print(f"{args.suite}: FAIL (first failing case: {first})")
    return 1


# -- sweep --------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    from .harness.overhead import overhead_report, report_csv

    try:
        cfg, _ = _config(args)
        variants = [Variant.parse(v) for v in args.variants.split(",") if v.strip()]
        if not variants:
            raise ConfigError("no variants given")
        for v in variants:
            problems = validate_config(cfg, v)
            if problems:
                raise ConfigError([f"{v.label}: {p}" for p in problems])
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    try:
        traces = {}
        for spec in args.trace or ():
            name, _, path = spec.rpartition("=")
            name = name or Path(path).stem
            if name in traces:
                raise TraceError(0, 0, f"duplicate trace name {name!r}", "--trace")
            traces[name] = [load_trace(path, cfg.dram_bytes)]
        if not traces:
            raise TraceError(0, 0, "empty trace set", "sweep")
    except TraceError as e:
        _err(str(e))
        return EXIT_TRACE
    try:
        rows = overhead_report(traces, variants, cfg)
    except SimulationAbort as e:
        _err(f"invariant abort at cycle {e.cycle}: {e}")
        return EXIT_ABORT
    text = report_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mi6sim", description="Cycle-level simulator of an isolating memory hierarchy.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run traces (and optionally a monitor schedule) and write stats")
    s.add_argument("--config", help="key=value config file (defaults to the full-size geometry)")
    s.add_argument("--variant", help="preset (base, secure, fpma, ...) or FLAG+FLAG list; overrides the config file")
    s.add_argument("--trace", action="append", metavar="coreN=PATH", help="trace for one core; repeatable")
    s.add_argument("--schedule", help="monitor schedule file")
    s.add_argument("--seed", type=int, help="replacement-policy seed (default: config value, 0)")
    s.add_argument("--stats", help="write the stats CSV here instead of stdout")
    s.add_argument("--log", help="write the event log here")
    s.add_argument("--max-cycles", type=int, default=50_000_000)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="run a verification suite; exit 0 iff it passes")
    v.add_argument("--suite", choices=SUITES, required=True)
    v.add_argument("--secure-variant", default="secure",
                   help="variant treated as secure, e.g. secure-RR_ARBITER to check a mutation")
    v.add_argument("--oversize", action="store_true", help="witnesses: give the secure machine d_max MSHRs")
    v.add_argument("--variant", help="coherence: variant to stress (default base)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--ops", type=int, default=100_000, help="coherence: total memory ops")
    v.add_argument("--pairs", type=int, default=50, help="noninterference: victim/attacker pairs")
    v.add_argument("--cycles", type=int, default=1_000_000, help="sizing: random-load cycles")
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("sweep", help="run every trace under every variant; CSV with a cycles_vs_base column")
    w.add_argument("--config")
    w.add_argument("--variants", required=True, help="comma-separated variant names")
    w.add_argument("--trace", action="append", metavar="[NAME=]PATH", help="single-core trace; repeatable")
    w.add_argument("--seed", type=int)
    w.add_argument("--out", help="write CSV here instead of stdout")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
