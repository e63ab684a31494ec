"""
Command line interface

    python -m hlcmon run       simulate a scenario and store its reports as JSONL
    python -m hlcmon monitor   monitor stored reports (or a fresh simulation) window by window
    python -m hlcmon sweep     monitor a scenario over the values of one parameter -> CSV
    python -m hlcmon oracle    brute-force ground truth for a small stored trace
    python -m hlcmon gen-sat   turn a CNF formula into a monitoring instance
"""

import argparse
import json
import logging
import os
import sys
from typing import Any

from hlcmon.config import encoder_from_values, load_config_file, merge, scenario_from_values, windowing_from_values
from hlcmon.metrics import capacity_estimate, verdict_histogram
from hlcmon.monitor import SWEEP_AXES, MonitorReport, count_reports, monitor_reports, monitor_run, sweep, write_sweep_csv
from hlcmon.oracle import (
    OracleLimits,
    brute_force_sat,
    find_valid_snapshot,
    gen_satisfiability_instance,
    random_cnf,
)
from hlcmon.reporter import read_reports, reports_from_trace, trace_from_reports, write_reports
from hlcmon.simulator import run
from hlcmon.trace_model import parse_predicate, read_dimacs

logger = logging.getLogger(__name__)

DATA_DIR = "data"


def _add_scenario_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("scenario")
    group.add_argument("--config", help="scenario file with key = value lines; flags override it")
    group.add_argument("--n", type=int, help="number of processes (default 10)")
    group.add_argument("--tick-ms", type=float, help="length of a tick in ms (default 0.01)")
    group.add_argument("--epsilon", type=int, help="clock synchronization bound in ticks (default 1000)")
    group.add_argument("--delta", type=int, help="message delay in ticks (default 100)")
    group.add_argument("--delta-min", type=int, help="lower end of a random message delay")
    group.add_argument("--delta-max", type=int, help="upper end of a random message delay")
    group.add_argument("--mfr", type=float, help="send probability per process and tick (default 0.01)")
    group.add_argument("--duration", type=int, help="run time in ticks (default 100000)")
    group.add_argument("--seed", type=int, help="random seed (default 0)")
    group.add_argument("--link-delay", type=int, help="max delay in ticks on the links to the monitor (default 0)")
    group.add_argument("--workload", choices=("synthetic", "exclusive"), help="workload (default synthetic)")
    group.add_argument("--beta", type=float, help="synthetic: change probability per tick (default 0.01)")
    group.add_argument("--interval", type=int, help="synthetic: minimum ticks between changes (default 10)")
    group.add_argument("--domain", choices=("bool", "int"), help="synthetic: variable domain (default bool)")
    group.add_argument("--slot", type=int, help="exclusive: slot length in ticks (default 10000)")
    group.add_argument("--guard", type=int, help="exclusive: guard ticks at the end of a slot (default 1000)")
    group.add_argument("--overrun", type=int, help="exclusive: overrun in ticks (default 100)")
    group.add_argument("--overrun-prob", type=float, help="exclusive: overrun probability (default 0.1)")


def _add_monitor_flags(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--predicate",
        default="conjunction",
        help="conjunction, pairwise, exactly:K, atleast:K, sum-eq:K, sum-geq:K or cnf:PATH (default conjunction)",
    )
    group = parser.add_argument_group("encoder")
    group.add_argument("--combine", action="store_true", default=None, help="fold <l,c> into nl = c'*l + c")
    group.add_argument("--c-prime", type=int, help="fixed c' (default: max(4, largest counter + 1) per window)")
    group.add_argument("--solver", help="solver command line, called with the script path appended")
    group.add_argument("--timeout", type=float, help="solver timeout per window in seconds (default 60)")
    group = parser.add_argument_group("windowing")
    group.add_argument("--period", type=int, help="ticks per solver invocation (default 100000)")
    group.add_argument("--overlap", type=int, help="ticks each window reaches back (default epsilon)")
    group.add_argument("--workers", type=int, help="windows solved in parallel (default 1)")
    parser.add_argument("--dump-smt", metavar="DIR", help="write every window's SMT-LIB2 script to DIR")


def _values(args: argparse.Namespace) -> dict[str, Any]:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    return merge(file_values, vars(args))


def _default_path(path: str | None, name: str) -> str:
    if path:
        return path
    os.makedirs(DATA_DIR, exist_ok=True)
    return os.path.join(DATA_DIR, name)


def _write_monitor_reports(reports: list[MonitorReport], path: str):
    lines = [json.dumps(r.to_record()) + "\n" for r in reports]
    if path == "-":
        sys.stdout.writelines(lines)
        return
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(lines)
    logger.info(f"# Wrote {len(lines)} window reports to {path}")


def cmd_run(args: argparse.Namespace) -> int:
    config = scenario_from_values(_values(args))
    trace = run(config)
    write_reports(reports_from_trace(trace), _default_path(args.out, "reports.jsonl"))
    return 0


def cmd_monitor(args: argparse.Namespace) -> int:
    values = _values(args)
    if args.reports:
        if "epsilon" not in values:
            logger.error("## --epsilon is needed to monitor stored reports")
            return 2
        stream = read_reports(args.reports)
        trace = trace_from_reports(stream, values["epsilon"])
        predicate = parse_predicate(args.predicate, trace.domain)
        encoder = encoder_from_values(values, trace.epsilon)
        windowing = windowing_from_values(values, trace.epsilon)
        tick_ms = values.get("tick_ms", 0.01)
        n_var, n_msg = count_reports(stream)
        logger.info(f"### {args.reports}: {n_var} variable and {n_msg} message reports")
        results = monitor_reports(stream, trace.n, trace.horizon.l, predicate, encoder, windowing, tick_ms, args.dump_smt)
        n, horizon = trace.n, trace.horizon.l
    else:
        config = scenario_from_values(values)
        predicate = parse_predicate(args.predicate, config.domain)
        encoder = encoder_from_values(values, config.epsilon)
        windowing = windowing_from_values(values, config.epsilon)
        results = monitor_run(config, windowing, predicate, encoder, args.dump_smt)
        n, horizon, tick_ms = config.n, config.duration + config.epsilon, config.tick_ms

    _write_monitor_reports(results, _default_path(args.out, "monitor.jsonl"))
    histogram = verdict_histogram(r.verdict for r in results)
    capacity = capacity_estimate((r.solver_seconds for r in results), horizon * tick_ms / 1000, n)
    logger.info(f"### Verdicts: {histogram}")
    logger.info(
        f"### c = {capacity.c:.3f} solver seconds per second: {capacity.standalone_monitors} standalone monitor(s), "
        f"or {100 * capacity.combined_fraction:.1f}% of each process when combined"
    )
    return 1 if histogram["error"] else 0


def cmd_sweep(args: argparse.Namespace) -> int:
    values = _values(args)
    base = scenario_from_values(values)
    predicate = parse_predicate(args.predicate, base.domain)
    encoder = encoder_from_values(values, base.epsilon)
    windowing = windowing_from_values(values, base.epsilon)
    points = [float(v) for v in args.values.split(",") if v.strip()]
    rows = sweep(args.axis, points, base, predicate, windowing, encoder, seeds=range(args.seeds))
    write_sweep_csv(rows, _default_path(args.out, f"sweep_{args.axis}.csv"))
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    trace = trace_from_reports(read_reports(args.reports), args.epsilon)
    predicate = parse_predicate(args.predicate, trace.domain)
    limits = OracleLimits(args.max_processes, args.max_ticks, args.max_events)
    witness = find_valid_snapshot(trace, predicate, limits=limits)
    logger.info(f"### {'valid snapshot found' if witness else 'no valid snapshot'} for {predicate}")
    print(json.dumps(witness.to_records() if witness else None))
    return 0


def cmd_gen_sat(args: argparse.Namespace) -> int:
    if args.cnf:
        num_vars, clauses = read_dimacs(args.cnf)
    else:
        num_vars, clauses = args.vars, random_cnf(args.vars, args.clauses, args.seed)
    trace, predicate = gen_satisfiability_instance(clauses, num_vars, args.epsilon, args.seed)
    write_reports(reports_from_trace(trace), _default_path(args.out, "gen_sat.jsonl"))
    satisfiable = brute_force_sat(clauses, num_vars)
    logger.info(f"### {num_vars} variables, {len(clauses)} clauses: {'satisfiable' if satisfiable else 'unsatisfiable'}")
    with open(_default_path(args.cnf_out, "gen_sat.cnf"), "w", encoding="utf-8") as f:
        f.write(f"p cnf {num_vars} {len(clauses)}\n")
        f.writelines(" ".join(map(str, clause)) + " 0\n" for clause in clauses)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlcmon", description="Runtime monitoring of partially synchronous systems with HLC and SMT")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and store its reports")
    _add_scenario_flags(p)
    p.add_argument("--out", help=f"reports file, - for stdout (default {DATA_DIR}/reports.jsonl)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("monitor", help="monitor stored reports or a fresh simulation")
    _add_scenario_flags(p)
    _add_monitor_flags(p)
    p.add_argument("--reports", help="reports file (- for stdin); simulates the scenario if omitted")
    p.add_argument("--out", help=f"window reports file, - for stdout (default {DATA_DIR}/monitor.jsonl)")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("sweep", help="monitor a scenario over the values of one parameter")
    _add_scenario_flags(p)
    _add_monitor_flags(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True, help="mfr (msgs/s), delta/epsilon/interval (ms), beta")
    p.add_argument("--values", required=True, help="comma separated values, e.g. 100,1000,10000")
    p.add_argument("--seeds", type=int, default=5, help="runs per value, seeds 0..N-1 (default 5)")
    p.add_argument("--out", help=f"CSV file (default {DATA_DIR}/sweep_AXIS.csv)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="brute-force a small stored trace")
    p.add_argument("--reports", required=True, help="reports file (- for stdin)")
    p.add_argument("--epsilon", type=int, required=True, help="clock synchronization bound in ticks")
    p.add_argument("--predicate", default="conjunction", help="predicate, as for monitor")
    limits = OracleLimits()
    p.add_argument("--max-processes", type=int, default=limits.max_processes)
    p.add_argument("--max-ticks", type=int, default=limits.max_ticks)
    p.add_argument("--max-events", type=int, default=limits.max_events)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gen-sat", help="turn a CNF formula into a monitoring instance")
    p.add_argument("--cnf", help="DIMACS file; a random formula is generated if omitted")
    p.add_argument("--vars", type=int, default=3, help="variables of the random formula (default 3)")
    p.add_argument("--clauses", type=int, default=4, help="clauses of the random formula (default 4)")
    p.add_argument("--epsilon", type=int, default=20, help="clock synchronization bound in ticks (default 20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"reports file (default {DATA_DIR}/gen_sat.jsonl)")
    p.add_argument("--cnf-out", help=f"where to store the formula (default {DATA_DIR}/gen_sat.cnf)")
    p.set_defaults(func=cmd_gen_sat)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig()
    logging.getLogger("hlcmon").setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        logger.error(f"## {e}")
        return 2
