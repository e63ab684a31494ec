"""Periodic monitoring of a report stream: windows, solver invocations, latency and parameter sweeps"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from hlcmon.hlc import HlcTimestamp
from hlcmon.metrics import MinMaxScaler, mean, verdict_histogram
from hlcmon.reporter import ArrivedReport, MsgReport, Report, VarReport, schedule_arrivals
from hlcmon.simulator import ScenarioConfig, SyntheticWorkload, run
from hlcmon.smt_encoder import EncoderConfig, EncodingError, Sat, SolverError, Unsat, check, encode_window
from hlcmon.trace_model import Predicate, SnapshotAssignment, Trace

logger = logging.getLogger(__name__)

SWEEP_AXES = ("mfr", "delta", "beta", "interval", "epsilon")


@dataclass(frozen=True)
class MonitorWindowing:
    """The solver runs every period ticks on the window reaching back overlap ticks (default: epsilon)"""

    period: int = 100_000
    overlap: int | None = None
    workers: int = 1

    def resolved_overlap(self, epsilon: int) -> int:
        return epsilon if self.overlap is None else self.overlap

    def validate(self, epsilon: int):
        overlap = self.resolved_overlap(epsilon)
        if self.period <= 0:
            raise ValueError(f"Invalid windowing: period={self.period} must be positive")
        if not epsilon <= overlap < self.period:
            raise ValueError(f"Invalid windowing: need epsilon={epsilon} <= overlap={overlap} < period={self.period}")
        if self.workers < 1:
            raise ValueError(f"Invalid windowing: workers={self.workers} must be at least 1")


@dataclass(frozen=True)
class MonitorReport:
    index: int
    lo: int
    hi: int
    verdict: str
    witness: SnapshotAssignment | None
    solver_seconds: float
    encode_seconds: float
    n_var_reports: int
    n_msg_reports: int
    c_prime: int
    verdict_tick: int
    latency_ticks: int | None = None
    latency_ms: float | None = None
    error: str = ""

    def to_record(self) -> dict:
        return {
            "window": self.index,
            "interval": [self.lo, self.hi],
            "verdict": self.verdict,
            "witness": self.witness.to_records() if self.witness else None,
            "solver_seconds": round(self.solver_seconds, 6),
            "encode_seconds": round(self.encode_seconds, 6),
            "var_reports": self.n_var_reports,
            "msg_reports": self.n_msg_reports,
            "c_prime": self.c_prime,
            "verdict_tick": self.verdict_tick,
            "latency_ticks": self.latency_ticks,
            "latency_ms": self.latency_ms,
            "error": self.error,
        }


def plan_windows(horizon: int, windowing: MonitorWindowing, epsilon: int) -> list[tuple[int, int]]:
    """[max(0, k*period - overlap), min((k+1)*period, horizon)) for every period up to the horizon"""
    windowing.validate(epsilon)
    overlap = windowing.resolved_overlap(epsilon)
    count = math.ceil(horizon / windowing.period)
    return [(max(0, k * windowing.period - overlap), min((k + 1) * windowing.period, horizon)) for k in range(count)]


def _verdict_tick(hi: int, arrivals: Sequence[ArrivedReport] | None) -> int:
    """When the monitor holds every report it needs for a window ending at hi"""
    if not arrivals:
        return hi
    end = HlcTimestamp(hi)
    ready: dict[int, int] = {}
    for item in arrivals:
        r = item.report
        if isinstance(r, VarReport) and r.proc not in ready and not r.end < end:
            ready[r.proc] = item.arrival
    return max([hi, *ready.values()])


def _monitor_window(
    index: int,
    lo: int,
    hi: int,
    reports: Sequence[Report],
    n: int,
    predicate: Predicate,
    encoder: EncoderConfig,
    tick_ms: float,
    verdict_tick: int,
    dump_smt: str | None,
) -> MonitorReport:
    start = time.perf_counter()
    try:
        script = encode_window(reports, n, lo, hi, predicate, encoder)
    except EncodingError as e:
        logger.warning(f"## Window {index}: {e}; re-encoding with an automatic c'")
        script = encode_window(reports, n, lo, hi, predicate, replace(encoder, c_prime=None))
    encode_seconds = time.perf_counter() - start
    if dump_smt:
        with open(os.path.join(dump_smt, f"window_{index:04d}.smt2"), "w", encoding="utf-8") as f:
            f.write(script.render())

    result = check(script, encoder)
    counts = {"n_var_reports": len(script.var_events), "n_msg_reports": len(script.communication)}
    common = {"index": index, "lo": lo, "hi": hi, "encode_seconds": encode_seconds, "c_prime": script.c_prime, **counts}
    if isinstance(result, Sat):
        seen_at = max(ts.l for ts in result.assignment.timestamps)
        latency = max(0, verdict_tick - seen_at)
        report = MonitorReport(
            verdict="sat",
            witness=result.assignment,
            solver_seconds=result.solver_seconds,
            verdict_tick=verdict_tick,
            latency_ticks=latency,
            latency_ms=latency * tick_ms + 1000 * result.solver_seconds,
            **common,
        )
    elif isinstance(result, Unsat):
        report = MonitorReport(verdict="unsat", witness=None, solver_seconds=result.solver_seconds, verdict_tick=verdict_tick, **common)
    else:
        assert isinstance(result, SolverError)
        report = MonitorReport(
            verdict="error",
            witness=None,
            solver_seconds=result.solver_seconds,
            verdict_tick=verdict_tick,
            error=result.message,
            **common,
        )
    logger.info(f"## Window {index} [{lo}, {hi}): {report.verdict} ({report.solver_seconds:.3f}s)")
    return report


def monitor_reports(
    reports: Iterable[Report] | Iterable[ArrivedReport],
    n: int,
    horizon: int,
    predicate: Predicate,
    encoder: EncoderConfig,
    windowing: MonitorWindowing | None = None,
    tick_ms: float = 0.01,
    dump_smt: str | None = None,
) -> list[MonitorReport]:
    """
    Monitor a complete report stream

    Inputs:
        - reports: the reports in the order the monitor ingests them, optionally with arrival ticks
        - n: number of processes
        - horizon: end (ticks of HLC l) of the monitored time
        - predicate: the predicate to detect
        - encoder: encoder and solver settings
        - windowing: solver period and window overlap
        - tick_ms: tick length for latencies in ms
        - dump_smt: directory to write each window's script to
    Returns:
        - one MonitorReport per window, in window order; solver failures are reported, not raised
    """
    windowing = windowing or MonitorWindowing()
    items = list(reports)
    arrivals = [r for r in items if isinstance(r, ArrivedReport)] or None
    ingested: list[Report] = [r.report if isinstance(r, ArrivedReport) else r for r in items]
    predicate.validate(n)
    windows = plan_windows(horizon, windowing, encoder.epsilon)
    logger.info(f"### Monitoring {len(ingested)} reports from {n} processes in {len(windows)} windows for {predicate}")
    if dump_smt:
        os.makedirs(dump_smt, exist_ok=True)

    def solve(indexed: tuple[int, tuple[int, int]]) -> MonitorReport:
        index, (lo, hi) = indexed
        tick = _verdict_tick(hi, arrivals)
        return _monitor_window(index, lo, hi, ingested, n, predicate, encoder, tick_ms, tick, dump_smt)

    if windowing.workers > 1:
        with ThreadPoolExecutor(max_workers=windowing.workers) as pool:
            return list(pool.map(solve, enumerate(windows)))
    return [solve(item) for item in enumerate(windows)]


def monitor_trace(
    trace: Trace,
    predicate: Predicate,
    encoder: EncoderConfig | None = None,
    windowing: MonitorWindowing | None = None,
    link_delay: int = 0,
    seed: int = 0,
    tick_ms: float = 0.01,
    dump_smt: str | None = None,
) -> list[MonitorReport]:
    encoder = encoder or EncoderConfig(epsilon=trace.epsilon)
    arrivals = schedule_arrivals(trace, link_delay, seed)
    return monitor_reports(arrivals, trace.n, trace.horizon.l, predicate, encoder, windowing, tick_ms, dump_smt)


def monitor_run(
    config: ScenarioConfig,
    windowing: MonitorWindowing | None,
    predicate: Predicate,
    encoder: EncoderConfig | None = None,
    dump_smt: str | None = None,
) -> list[MonitorReport]:
    """Simulate the scenario and monitor it; the encoder always assumes the scenario's epsilon"""
    encoder = replace(encoder, epsilon=config.epsilon) if encoder else EncoderConfig(epsilon=config.epsilon)
    trace = run(config)
    return monitor_trace(trace, predicate, encoder, windowing, config.link_delay, config.seed, config.tick_ms, dump_smt)


def apply_axis(base: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    """
    Set one sweep parameter given in natural units

    mfr is in messages per second per process, delta, epsilon and interval in ms, beta a probability.
    """
    ticks = round(value / base.tick_ms)
    if axis == "mfr":
        return replace(base, mfr=value * base.tick_ms / 1000)
    if axis == "delta":
        return replace(base, delta=ticks, delta_min=None, delta_max=None)
    if axis == "epsilon":
        return replace(base, epsilon=ticks)
    if axis in ("beta", "interval"):
        if not isinstance(base.workload, SyntheticWorkload):
            raise ValueError(f"axis {axis} needs the synthetic workload")
        setting = {"beta": value} if axis == "beta" else {"interval": ticks}
        return replace(base, workload=replace(base.workload, **setting))
    raise ValueError(f"unknown sweep axis {axis!r} (expected one of {', '.join(SWEEP_AXES)})")


def sweep(
    axis: str,
    values: Sequence[float],
    base: ScenarioConfig,
    predicate: Predicate,
    windowing: MonitorWindowing | None = None,
    encoder: EncoderConfig | None = None,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
) -> list[dict]:
    """
    Monitor the scenario for every value of one parameter and every seed

    Returns:
        - one row per value with mean solver/encode time and latency, and the verdict histogram;
          runs that fail are counted in "failed_runs" and the sweep goes on
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r} (expected one of {', '.join(SWEEP_AXES)})")
    rows = []
    for value in values:
        logger.info(f"### Sweep {axis}={value}")
        reports: list[MonitorReport] = []
        failures: list[str] = []
        for seed in seeds:
            try:
                config = replace(apply_axis(base, axis, value), seed=seed)
                reports += monitor_run(config, windowing, predicate, encoder)
            except (ValueError, RuntimeError, OSError) as e:
                logger.warning(f"## Sweep point {axis}={value}, seed {seed} failed: {e}")
                failures.append(f"seed {seed}: {e}")
        latencies = [r.latency_ms for r in reports if r.latency_ms is not None]
        rows.append(
            {
                "axis": axis,
                "value": value,
                "runs": len(seeds),
                "failed_runs": len(failures),
                "windows": len(reports),
                "mean_solver_seconds": mean(r.solver_seconds for r in reports),
                "mean_encode_seconds": mean(r.encode_seconds for r in reports),
                "mean_latency_ms": mean(latencies),
                **verdict_histogram(r.verdict for r in reports),
                "failures": "; ".join(failures),
            }
        )
    scaler = MinMaxScaler({str(i): row for i, row in enumerate(rows)}, "mean_solver_seconds")
    for row in rows:
        row["scaled_solver_seconds"] = scaler.scale(row["mean_solver_seconds"])
    return rows


def write_sweep_csv(rows: Sequence[dict], path: str):
    if not rows:
        raise ValueError("no sweep rows to write")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"# Wrote {len(rows)} sweep rows to {path}")


def count_reports(reports: Iterable[Report]) -> tuple[int, int]:
    """(variable reports, message reports)"""
    items = list(reports)
    return sum(isinstance(r, VarReport) for r in items), sum(isinstance(r, MsgReport) for r in items)
