"""Process-side instrumentation: the reports each process sends to the monitor, and their JSONL form"""

from __future__ import annotations

import json
import logging
import sys
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from itertools import chain

import numpy as np

from hlcmon.hlc import ZERO, HlcTimestamp, counter_base, hlc_less
from hlcmon.trace_model import Domain, Event, EventKind, Message, Segment, Trace, Value, validate_trace

logger = logging.getLogger(__name__)


class ReportError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class VarReport:
    """P_proc held old_value during the half-open HLC interval [start, end)"""

    proc: int
    old_value: Value
    start: HlcTimestamp
    end: HlcTimestamp

    @property
    def interval(self) -> tuple[HlcTimestamp, HlcTimestamp]:
        return self.start, self.end

    @property
    def reporter(self) -> int:
        return self.proc


@dataclass(frozen=True, slots=True)
class MsgReport:
    """Sent by the receiver: P_sender sent at send_hlc what P_receiver received at recv_hlc"""

    sender: int
    send_hlc: HlcTimestamp
    receiver: int
    recv_hlc: HlcTimestamp

    @property
    def reporter(self) -> int:
        return self.receiver


Report = VarReport | MsgReport


@dataclass(frozen=True, slots=True)
class ArrivedReport:
    arrival: int
    report: Report


def report_var_change(proc: int, old_value: Value, prev_hlc: HlcTimestamp, new_hlc: HlcTimestamp) -> VarReport:
    """
    Report that P_proc changed its variable at new_hlc

    Inputs:
        - proc: the reporting process
        - old_value: the value before the change
        - prev_hlc: timestamp of the previous variable event (<0,0> for the first change)
        - new_hlc: timestamp of this variable event
    Returns:
        - VarReport for the interval [prev_hlc, new_hlc) in which old_value held
    """
    if not hlc_less(prev_hlc, new_hlc):
        raise ReportError(f"P{proc}: interval [{prev_hlc}, {new_hlc}) is empty")
    return VarReport(proc, old_value, prev_hlc, new_hlc)


def report_message(sender: int, send_hlc: HlcTimestamp, receiver: int, recv_hlc: HlcTimestamp) -> MsgReport:
    if not hlc_less(send_hlc, recv_hlc):
        raise ReportError(f"message P{sender} -> P{receiver} received at {recv_hlc}, not after its send at {send_hlc}")
    if sender == receiver:
        raise ReportError(f"P{sender} cannot message itself")
    return MsgReport(sender, send_hlc, receiver, recv_hlc)


def _var_events(trace: Trace, proc: int) -> list[Event]:
    return [e for e in trace.process_events(proc) if e.kind is EventKind.VAR]


def finalize_open_intervals(trace: Trace, horizon_hlc: HlcTimestamp | None = None) -> list[VarReport]:
    """Close the last interval of every process at horizon_hlc (default: the trace's horizon)"""
    horizon_hlc = horizon_hlc or trace.horizon
    reports = []
    for proc in range(1, trace.n + 1):
        changes = _var_events(trace, proc)
        last_hlc = changes[-1].hlc if changes else ZERO
        value = changes[-1].new_value if changes else trace.initial_value(proc)
        if hlc_less(last_hlc, horizon_hlc):
            reports.append(VarReport(proc, value, last_hlc, horizon_hlc))  # type: ignore[arg-type]
    return reports


def _emissions(trace: Trace) -> dict[int, list[tuple[int, Report]]]:
    """Per process, the reports in FIFO order together with the real-time tick they are sent at"""
    messages = {m.msg_id: m for m in trace.messages}
    closing = {r.proc: r for r in finalize_open_intervals(trace)}
    end_tick = trace.horizon.l - (trace.epsilon if trace.offsets else 0)
    emitted: dict[int, list[tuple[int, Report]]] = {}
    for proc in range(1, trace.n + 1):
        offset = trace.offsets[proc - 1] if trace.offsets else 0
        prev_hlc, value = ZERO, trace.initial_value(proc)
        out: list[tuple[int, Report]] = []
        for event in trace.process_events(proc):
            if event.kind is EventKind.VAR:
                out.append((event.pt - offset, report_var_change(proc, value, prev_hlc, event.hlc)))
                prev_hlc, value = event.hlc, event.new_value  # type: ignore[assignment]
            elif event.kind is EventKind.RECEIVE:
                m = messages[event.msg_id]  # type: ignore[index]
                out.append((event.pt - offset, report_message(m.sender, m.send_hlc, m.receiver, m.recv_hlc)))
        if proc in closing:
            out.append((max(end_tick, out[-1][0] if out else 0), closing[proc]))
        emitted[proc] = out
    return emitted


def reports_from_trace(trace: Trace) -> list[Report]:
    """All reports of a run, process by process, each process' reports in the order it sends them"""
    return [report for out in _emissions(trace).values() for _, report in out]


def schedule_arrivals(trace: Trace, link_delay: int = 0, seed: int = 0) -> list[ArrivedReport]:
    """
    Simulate the monitor links

    Every process has its own FIFO channel to the monitor; a report sent at tick t arrives at
    max(arrival of the previous report on that channel, t + U[0, link_delay]).

    Returns:
        - the reports in the order the monitor ingests them (arrival tick, then process id)
    """
    rng = np.random.default_rng(seed)
    arrived = []
    for proc, out in _emissions(trace).items():
        last = 0
        delays = rng.integers(0, link_delay, size=len(out), endpoint=True) if link_delay else [0] * len(out)
        for (tick, report), delay in zip(out, delays, strict=True):
            last = max(last, tick + int(delay))
            arrived.append((last, proc, ArrivedReport(last, report)))
    arrived.sort(key=lambda item: (item[0], item[1]))
    return [item[2] for item in arrived]


def segments_from_reports(reports: Iterable[Report]) -> dict[int, list[Segment]]:
    """
    Rebuild each process' value function over HLC time from its VarReports alone

    The reports may come in any order across processes; per process the intervals must tile
    [<0,0>, end) without gaps or overlap.
    """
    by_proc: dict[int, list[VarReport]] = defaultdict(list)
    for r in reports:
        if isinstance(r, VarReport):
            by_proc[r.proc].append(r)
    segments = {}
    for proc, reps in sorted(by_proc.items()):
        reps.sort(key=lambda r: r.start)
        expected = ZERO
        for r in reps:
            if r.start != expected:
                raise ReportError(f"P{proc}: reports leave a gap or overlap at {expected} (next interval starts at {r.start})")
            expected = r.end
        segments[proc] = [Segment(r.start, r.end, r.old_value) for r in reps]
    return segments


def trace_from_reports(reports: Sequence[Report], epsilon: int, n: int | None = None) -> Trace:
    """
    Rebuild a monitor-side Trace from a complete report stream

    Every process must report intervals covering the same [<0,0>, horizon). Physical times of the
    synthesized events are their HLC l values; the counters split each tick into c' subticks
    (Trace.subticks), c' being hlc.counter_base over all reported stamps.
    """
    segments = segments_from_reports(reports)
    n = n or max((max(r.sender, r.receiver) if isinstance(r, MsgReport) else r.proc for r in reports), default=0)
    if sorted(segments) != list(range(1, n + 1)):
        raise ReportError(f"expected variable reports from processes 1..{n}, got {sorted(segments)}")
    horizons = {segs[-1].end for segs in segments.values()}
    if len(horizons) != 1:
        raise ReportError(f"processes report up to different horizons: {sorted(horizons)}")
    (horizon,) = horizons
    values = [s.value for segs in segments.values() for s in segs]
    domain = Domain.BOOL if all(type(v) is bool for v in values) else Domain.INT

    msg_reports = sorted((r for r in reports if isinstance(r, MsgReport)), key=lambda r: (r.send_hlc, r.sender, r.recv_hlc, r.receiver))
    raw: dict[int, list[tuple[HlcTimestamp, dict]]] = defaultdict(list)
    for proc, segs in segments.items():
        for before, after in zip(segs, segs[1:], strict=False):
            raw[proc].append((before.end, {"kind": EventKind.VAR, "old_value": before.value, "new_value": after.value}))
    messages = []
    for msg_id, r in enumerate(msg_reports):
        raw[r.sender].append((r.send_hlc, {"kind": EventKind.SEND, "msg_id": msg_id}))
        raw[r.receiver].append((r.recv_hlc, {"kind": EventKind.RECEIVE, "msg_id": msg_id}))
        messages.append(Message(msg_id, r.sender, r.send_hlc, r.receiver, r.recv_hlc))

    events = []
    for proc in range(1, n + 1):
        items = sorted(raw[proc], key=lambda item: item[0])
        events.append(tuple(Event(proc, i, pt=ts.l, hlc=ts, **kw) for i, (ts, kw) in enumerate(items)))
    trace = Trace(
        n=n,
        epsilon=epsilon,
        events=tuple(events),
        messages=tuple(messages),
        horizon=horizon,
        domain=domain,
        initial_values=tuple(segments[proc][0].value for proc in range(1, n + 1)),
        subticks=counter_base([*(e.hlc for e in chain.from_iterable(events)), horizon]),
    )
    try:
        validate_trace(trace)
    except ValueError as e:
        raise ReportError(f"reports do not form a valid trace: {e}") from e
    return trace


def to_record(report: Report) -> dict:
    if isinstance(report, VarReport):
        return {"type": "var", "proc": report.proc, "old": report.old_value, "interval": [str(report.start), str(report.end)]}
    return {"type": "msg", "from": report.sender, "sent": str(report.send_hlc), "to": report.receiver, "recv": str(report.recv_hlc)}


def from_record(record: dict) -> Report:
    try:
        if record["type"] == "var":
            start, end = (HlcTimestamp.parse(s) for s in record["interval"])
            return report_var_change(int(record["proc"]), record["old"], start, end)
        if record["type"] == "msg":
            return report_message(
                int(record["from"]), HlcTimestamp.parse(record["sent"]), int(record["to"]), HlcTimestamp.parse(record["recv"])
            )
    except (KeyError, TypeError) as e:
        raise ReportError(f"malformed report record {record}: {e!r}") from e
    raise ReportError(f"unknown report type in {record}")


def write_reports(reports: Iterable[Report], path: str = "-"):
    """Write one JSON record per line to path ("-" for stdout)"""
    lines = [json.dumps(to_record(r)) + "\n" for r in reports]
    if path == "-":
        sys.stdout.writelines(lines)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.writelines(lines)
        logger.info(f"# Wrote {len(lines)} reports to {path}")


def read_reports(path: str = "-") -> list[Report]:
    def parse(lines: Iterable[str]) -> list[Report]:
        reports = []
        for i, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ReportError(f"{path}:{i}: not a JSON record ({e})") from e
            reports.append(from_record(record))
        return reports

    if path == "-":
        return parse(sys.stdin)
    with open(path, encoding="utf-8") as f:
        return parse(f)
