"""hammersim command line.

Every subcommand accepts ``--config FILE``: a JSON object whose top-level
keys set defaults for any subcommand and whose ``"<subcommand>"`` object
sets defaults for that one only.  Flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .addrmap import AddressSpace, MappingConfig, describe
from .adjacency import AdjacencyMap
from .analyzer import (AnalyzerError, act_latency_cdf, acts_per_trefi, dumps_csv,
                       export_metrics_csv, import_csv, summarize)
from .controller import ControllerConfig
from .cpu import Catalog, default_catalog, generate_stream, profile_for
from .device import DATA_PATTERNS, ROW_BITS, parse_pattern
from .inference import SURVEY_SCRIPT, Thresholds, infer_map, survey_rows, write_density_csv
from .injector import ProtocolScript, Scenario, run_protocol
from .methodology import DEFAULT_WINDOW, TestPlan, exit_code, run_bank_test
from .profiles import list_profiles, load_profile, with_adjacency
from .protocol import truth_table
from .testbed import System
from .timing import PS_PER_NS, TimingParams, parse_duration

EXIT_OK, EXIT_ERROR, EXIT_FLIPS = 0, 1, 2


class CliError(Exception):
    pass


# -- argument helpers -----------------------------------------------------------

def parse_rows(text: str) -> list[int]:
    """'0x11400:0x11410' (end exclusive), '0x10,0x12' or a mix of both."""
    rows: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            lo, hi = part.split(":", 1)
            rows.extend(range(int(lo, 0), int(hi, 0)))
        else:
            rows.append(int(part, 0))
    return rows


def _int(text) -> int:
    return text if isinstance(text, int) else int(text, 0)


def _duration(text) -> int:
    try:
        return text if isinstance(text, int) else parse_duration(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}") from exc


def _pattern(text) -> int:
    try:
        return text if isinstance(text, int) else parse_pattern(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _profile(args):
    prof = load_profile(args.profile)
    if getattr(args, "adjacency", None):
        prof = with_adjacency(prof, AdjacencyMap.loads(Path(args.adjacency).read_text()))
    return prof


def _mapping(args) -> MappingConfig:
    return MappingConfig.from_mapping(_load_json(args.mapping)) if args.mapping else MappingConfig()


def _params(args) -> TimingParams:
    return TimingParams.from_mapping(_load_json(args.timing)) if args.timing else TimingParams()


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


# -- subcommands ----------------------------------------------------------------

def cmd_profiles(args) -> int:
    if args.show:
        print(load_profile(args.show).dumps())
        return EXIT_OK
    for p in list_profiles():
        print(f"{p.vendor:10s} {p.description}")
    return EXIT_OK


def cmd_truth_table(args) -> int:
    print(f"{'cmd':8s} ACT_n RAS CAS WE  with A14 low")
    for name, act, ras, cas, we, faulted in truth_table():
        print(f"{name:8s} {act:5s} {ras:3s} {cas:3s} {we:3s} {faulted}")
    return EXIT_OK


def cmd_map(args) -> int:
    cfg = _mapping(args)
    for text in args.address:
        a = _int(text)
        pa = AddressSpace(base=args.base).virt_to_phys(a) if args.virtual else a
        print(describe(cfg, pa))
    return EXIT_OK


def cmd_simulate(args) -> int:
    params = _params(args)
    prof = _profile(args)
    catalog = Catalog.load(args.catalog) if args.catalog else default_catalog()
    seq = profile_for(args.sequence, args.arch, catalog)
    ctrl = ControllerConfig(refresh_multiplier=args.refresh_multiplier)
    sys_ = System(prof, seed=args.seed, controller=ctrl, params=params, mapping=_mapping(args),
                  banks=[args.bank])
    rows = args.rows or [1, 3]
    if len(rows) != 2:
        raise CliError("--rows needs exactly two rows")
    addrs = tuple(sys_.address(args.bank, r) for r in rows)
    # one extra refresh interval so the last window is closed by a REF
    until = args.duration + params.t_refi
    sys_.run(generate_stream(seq, addrs, args.duration, seed=args.seed, space=sys_.space,
                             cfg=sys_.mapping), until=until)
    trace = sys_.controller_trace if args.side == "controller" else sys_.device_trace
    with _open_out(args.output) as fh:
        fh.write(dumps_csv(trace))
    if args.stats:
        try:
            acts = acts_per_trefi(trace, bank=args.bank)
            print(json.dumps({"acts_per_trefi": summarize(acts)}), file=sys.stderr)
        except AnalyzerError as exc:
            print(f"stats unavailable: {exc}", file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    trace = import_csv(args.trace)
    out: dict = {}
    acts = cdf = None
    try:
        acts = acts_per_trefi(trace, bank=args.bank)
        out["acts_per_trefi"] = summarize(acts)
    except AnalyzerError as exc:
        out["acts_per_trefi"] = {"error": str(exc)}
    try:
        cdf = act_latency_cdf(trace, bank=args.bank, span_refresh=args.span_refresh)
        ns = cdf.deltas / PS_PER_NS
        out["act_to_act_ns"] = summarize(ns)
        out["act_to_act_ns"]["mode"] = cdf.mode() / PS_PER_NS
    except AnalyzerError as exc:
        out["act_to_act_ns"] = {"error": str(exc)}
    if args.metrics:
        export_metrics_csv(args.metrics, acts, cdf if args.cdf else None)
    print(json.dumps(out, indent=1))
    return EXIT_OK


def cmd_inject(args) -> int:
    prof = _profile(args)
    aggressors = tuple(args.aggressor or [0x11411])
    if len(aggressors) > 2:
        raise CliError("one or two aggressor rows")
    ctrl = ControllerConfig(scrambling=args.scrambling)
    sc = Scenario(prof, aggressors=aggressors, bank=args.bank, dummy_row=args.dummy_row,
                  sequence=args.sequence, arch=args.arch, victim_pattern=args.pattern,
                  aggressor_pattern=args.aggressor_pattern,
                  inspect_rows=parse_rows(args.inspect) if args.inspect else None,
                  seed=args.seed, controller=ctrl, params=_params(args))
    rep = run_protocol(_script(args, args.hold_equivalent), sc)
    print(rep.summary())
    if args.csv:
        rep.flips.to_csv(args.csv)
    return EXIT_OK


def _script(args, hold_equivalent: int) -> ProtocolScript:
    # --time-scale, when given, sets the refresh-free time relative to the hold
    if args.time_scale is not None:
        if args.time_scale <= 0:
            raise CliError("--time-scale must be positive")
        hold_equivalent = round(args.hold * args.time_scale)
    return ProtocolScript(hold=args.hold, hold_equivalent=hold_equivalent)


def cmd_infer(args) -> int:
    prof = _profile(args)
    rows = parse_rows(args.rows)
    if not rows:
        raise CliError("empty row range")
    inspect = parse_rows(args.inspect) if args.inspect else None
    script = _script(args, SURVEY_SCRIPT.hold_equivalent)
    reports = survey_rows(prof, args.bank, rows, dummy_row=args.dummy_row, inspect_rows=inspect,
                          seed=args.seed, script=script, workers=args.workers)
    thresholds = None
    if args.noise is not None:
        thresholds = Thresholds(noise=args.noise, purity=args.purity)
    amap, used = infer_map(reports, prof.rows_per_bank, thresholds)
    with _open_out(args.output) as fh:
        fh.write(amap.dumps() + "\n")
    if args.density_csv:
        write_density_csv(reports, args.density_csv, used)
    print(f"surveyed {len(rows)} rows; noise threshold {100 * used.noise:.4g}% "
          f"({used.noise * ROW_BITS:.0f} flips per row)", file=sys.stderr)
    return EXIT_OK


def cmd_test(args) -> int:
    prof = _profile(args)
    banks = tuple(parse_rows(args.banks))
    plan = TestPlan(prof, banks=banks, rows=parse_rows(args.rows), window=args.window,
                    victim_pattern=args.pattern, aggressor_pattern=args.aggressor_pattern,
                    batch_size=args.batch_size,
                    parallel_banks=min(args.parallel_banks, prof.banks),
                    refresh_multiplier=args.refresh_multiplier, sequence=args.sequence,
                    arch=args.arch, seed=args.seed, params=_params(args))
    result = run_bank_test(plan, workers=args.workers)
    if args.csv:
        result.to_csv(args.csv)
    summary = result.summary(plan.window)
    text = json.dumps(summary, indent=1)
    if args.summary:
        Path(args.summary).write_text(text + "\n")
    else:
        print(text)
    return exit_code(result)


# -- parser ---------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, profile: bool = True) -> None:
    p.add_argument("--config", help="JSON file of default option values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timing", help="JSON file overriding timing parameters")
    if profile:
        p.add_argument("--profile", default="vendor1", help="vendor name or profile JSON path")
        p.add_argument("--adjacency", help="adjacency map JSON replacing the profile's map")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hammersim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("profiles", help="list bundled vendor profiles")
    p.add_argument("--show", metavar="NAME", help="print one profile as JSON")
    p.add_argument("--config")
    p.set_defaults(func=cmd_profiles)

    p = sub.add_parser("truth-table", help="print the command truth table")
    p.add_argument("--config")
    p.set_defaults(func=cmd_truth_table)

    p = sub.add_parser("map", help="decompose addresses into channel/bank/row/column")
    p.add_argument("address", nargs="+")
    p.add_argument("--mapping", help="JSON bit-slice mapping")
    p.add_argument("--virtual", action="store_true", help="addresses are virtual")
    p.add_argument("--base", type=_int, default=AddressSpace().base)
    p.add_argument("--config")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("simulate", help="run a hammer sequence and emit a command trace CSV")
    _common(p)
    p.add_argument("--sequence", default="clflushopt-pair")
    p.add_argument("--arch", default="skylake")
    p.add_argument("--catalog", help="sequence catalog JSON")
    p.add_argument("--duration", type=_duration, default="1trefi",
                   help="e.g. 100trefi, 128ms, 46.7ns")
    p.add_argument("--bank", type=int, default=0)
    p.add_argument("--rows", type=parse_rows, help="two rows to alternate, e.g. 0x1,0x3")
    p.add_argument("--refresh-multiplier", type=float, default=1.0)
    p.add_argument("--mapping")
    p.add_argument("--side", choices=("device", "controller"), default="device")
    p.add_argument("--stats", action="store_true", help="ACTs/tREFI summary on stderr")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="metrics from a trace CSV")
    p.add_argument("trace")
    p.add_argument("--bank", type=int)
    p.add_argument("--metrics", help="write per-window ACT counts CSV here")
    p.add_argument("--cdf", action="store_true", help="append latency CDF columns to --metrics")
    p.add_argument("--span-refresh", action="store_true",
                   help="keep ACT deltas that straddle a REF")
    p.add_argument("--config")
    p.set_defaults(func=cmd_analyze)

    patterns = ", ".join(DATA_PATTERNS)
    p = sub.add_parser("inject", help="run the refresh-suppression injection protocol")
    _common(p)
    p.add_argument("--aggressor", type=_int, action="append", help="repeat for double-sided")
    p.add_argument("--dummy-row", type=_int)
    p.add_argument("--bank", type=int, default=0)
    p.add_argument("--sequence", default="store-clflushopt")
    p.add_argument("--arch", default="skylake")
    p.add_argument("--pattern", type=_pattern, default=DATA_PATTERNS["ones"],
                   help=f"victim seed ({patterns} or a 64-bit word)")
    p.add_argument("--aggressor-pattern", type=_pattern, help="default: complement of --pattern")
    p.add_argument("--inspect", help="rows to inspect, default aggressor +-16")
    p.add_argument("--hold", type=_duration, default=ProtocolScript().hold,
                   help="simulated hold time")
    p.add_argument("--hold-equivalent", type=_duration, default="15s",
                   help="refresh-free time the hold stands for")
    p.add_argument("--time-scale", type=float,
                   help="device time per simulated time during the hold; overrides "
                        "--hold-equivalent")
    p.add_argument("--scrambling", action="store_true")
    p.add_argument("--csv", help="flip coordinates CSV")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("infer", help="survey rows and infer the adjacency map")
    _common(p)
    p.add_argument("--rows", required=True, help="aggressor rows, e.g. 0x11400:0x11410")
    p.add_argument("--inspect", help="rows to inspect, default the surveyed rows")
    p.add_argument("--bank", type=int, default=0)
    p.add_argument("--dummy-row", type=_int)
    p.add_argument("--hold", type=_duration, default=SURVEY_SCRIPT.hold)
    p.add_argument("--time-scale", type=float,
                   help="device time per simulated time during the hold (default: 15s total)")
    p.add_argument("--noise", type=float, help="density floor, default auto-suggested")
    p.add_argument("--purity", type=float, default=Thresholds().purity)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--density-csv")
    p.add_argument("-o", "--output", help="adjacency map JSON")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("test", help="production row test with refresh on")
    _common(p)
    p.add_argument("--rows", required=True)
    p.add_argument("--banks", default="0")
    p.add_argument("--window", type=_duration, default=DEFAULT_WINDOW)
    p.add_argument("--pattern", type=_pattern, default=DATA_PATTERNS["ones"])
    p.add_argument("--aggressor-pattern", type=_pattern, default=DATA_PATTERNS["zeros"])
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--parallel-banks", type=int, default=8)
    p.add_argument("--workers", type=int, help="processes, default min(parallel banks, banks)")
    p.add_argument("--refresh-multiplier", type=float, default=1.0)
    p.add_argument("--sequence", default="clflushopt-pair")
    p.add_argument("--arch", default="skylake")
    p.add_argument("--csv", help="result CSV bank,row,pass,flip_count")
    p.add_argument("--summary", help="write the JSON summary here instead of stdout")
    p.set_defaults(func=cmd_test)
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = _load_json(known.config)
    if not isinstance(cfg, dict):
        raise CliError("config file must hold a JSON object")
    subs = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction)).choices
    shared = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    for name, p in subs.items():
        dests = {a.dest for a in p._actions}
        own = {k.replace("-", "_"): v for k, v in cfg.get(name, {}).items()}
        vals = {k: v for k, v in {**shared, **own}.items() if k in dests}
        unknown = set(own) - dests
        if unknown:
            raise CliError(f"unknown {name} option(s) in config: {', '.join(sorted(unknown))}")
        p.set_defaults(**vals)
        for a in p._actions:
            if a.dest in vals:
                a.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
        args = ap.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    except (CliError, ValueError, KeyError, OSError, AnalyzerError) as exc:
        print(f"hammersim: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
