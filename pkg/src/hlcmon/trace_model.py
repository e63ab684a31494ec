"""Events, traces, predicates and snapshots, plus the happened-before relation and consistency checks"""

from __future__ import annotations

import bisect
import logging
from collections import deque
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

from hlcmon.hlc import ZERO, HlcTimestamp, advance_local, hlc_less

logger = logging.getLogger(__name__)

Value = bool | int


class TraceError(ValueError):
    pass


class Domain(str, Enum):
    BOOL = "bool"
    INT = "int"

    def initial_value(self) -> Value:
        return False if self is Domain.BOOL else 0


class EventKind(str, Enum):
    VAR = "var"
    SEND = "send"
    RECEIVE = "receive"
    LOCAL = "local"


@dataclass(frozen=True, slots=True)
class Event:
    process: int
    index: int
    kind: EventKind
    pt: int
    hlc: HlcTimestamp
    old_value: Value | None = None
    new_value: Value | None = None
    msg_id: int | None = None


@dataclass(frozen=True, slots=True)
class Message:
    msg_id: int
    sender: int
    send_hlc: HlcTimestamp
    receiver: int
    recv_hlc: HlcTimestamp


@dataclass(frozen=True, slots=True)
class Segment:
    """The variable holds value during [start, end)"""

    start: HlcTimestamp
    end: HlcTimestamp
    value: Value


@dataclass(frozen=True)
class Trace:
    """
    One run of n processes (ids 1..n)

    events[i - 1] holds the events of process i in local order. offsets are the fixed physical
    clock offsets of the processes (empty for traces rebuilt from reports), horizon is the exclusive
    end of the observed HLC time.

    Happened-before compares event times: pt itself, or for traces rebuilt from reports (which
    only know pt = l) subticks * pt + c, i.e., the counter orders the events of one tick and
    epsilon spans epsilon * subticks such steps.
    """

    n: int
    epsilon: int
    events: tuple[tuple[Event, ...], ...]
    messages: tuple[Message, ...]
    horizon: HlcTimestamp
    domain: Domain = Domain.BOOL
    offsets: tuple[int, ...] = ()
    initial_values: tuple[Value, ...] = ()
    subticks: int | None = None

    @property
    def clock_bound(self) -> int:
        """epsilon in units of event time"""
        return self.epsilon * (self.subticks or 1)

    def stamp_time(self, ts: HlcTimestamp, pt: int | None = None) -> int:
        """Time of a (possibly inserted) event with HLC ts read at physical time pt (default: ts.l)"""
        pt = ts.l if pt is None else pt
        return self.subticks * pt + ts.c if self.subticks else pt

    def event_time(self, event: Event) -> int:
        return self.stamp_time(event.hlc, event.pt)

    @property
    def end_time(self) -> int:
        return self.stamp_time(self.horizon)

    def process_events(self, proc: int) -> tuple[Event, ...]:
        return self.events[proc - 1]

    def initial_value(self, proc: int) -> Value:
        if self.initial_values:
            return self.initial_values[proc - 1]
        return self.domain.initial_value()

    def all_events(self) -> Iterator[Event]:
        for events in self.events:
            yield from events

    def timestamps(self) -> Iterator[HlcTimestamp]:
        for event in self.all_events():
            yield event.hlc

    def contains(self, event: Event) -> bool:
        if not 1 <= event.process <= self.n:
            return False
        events = self.events[event.process - 1]
        return 0 <= event.index < len(events) and events[event.index] == event


def validate_trace(trace: Trace):
    """
    Raise a TraceError if the trace breaks per-process ordering or message matching

    HLC must increase strictly along each process, pt only weakly: one process may handle several
    events in the same tick, and the local clause of happened-before follows the event index.
    """
    if len(trace.events) != trace.n:
        raise TraceError(f"expected event lists for {trace.n} processes, got {len(trace.events)}")
    sends: dict[int, Event] = {}
    receives: dict[int, Event] = {}
    for proc, events in enumerate(trace.events, start=1):
        for index, event in enumerate(events):
            if event.process != proc or event.index != index:
                raise TraceError(f"event {event} is filed under process {proc} at index {index}")
            if index and not (events[index - 1].pt <= event.pt and hlc_less(events[index - 1].hlc, event.hlc)):
                raise TraceError(f"events of process {proc} are not increasing at index {index}")
            if not event.hlc < trace.horizon:
                raise TraceError(f"event {event} lies beyond the horizon {trace.horizon}")
            if trace.subticks and event.hlc.c >= trace.subticks:
                raise TraceError(f"counter of {event.hlc} does not fit into {trace.subticks} subticks")
            if event.kind in (EventKind.SEND, EventKind.RECEIVE):
                target = sends if event.kind is EventKind.SEND else receives
                if event.msg_id in target:
                    raise TraceError(f"message {event.msg_id} has two {event.kind.value} events")
                target[event.msg_id] = event  # type: ignore[index]
    if sends.keys() != receives.keys():
        raise TraceError("every receive needs exactly one matching send")
    for msg_id, send in sends.items():
        if not hlc_less(send.hlc, receives[msg_id].hlc):
            raise TraceError(f"message {msg_id} is received at {receives[msg_id].hlc} before being sent at {send.hlc}")


def value_segments(trace: Trace, proc: int) -> list[Segment]:
    """
    Value function of process proc over HLC time

    Returns:
        - consecutive non-empty segments tiling [<0,0>, horizon)
    """
    segments = []
    start, value = ZERO, trace.initial_value(proc)
    for event in trace.process_events(proc):
        if event.kind is not EventKind.VAR:
            continue
        segments.append(Segment(start, event.hlc, value))
        start, value = event.hlc, event.new_value  # type: ignore[assignment]
    segments.append(Segment(start, trace.horizon, value))
    return [s for s in segments if hlc_less(s.start, s.end)]


def value_at(trace: Trace, proc: int, ts: HlcTimestamp) -> Value:
    for segment in value_segments(trace, proc):
        if not hlc_less(ts, segment.start) and hlc_less(ts, segment.end):
            return segment.value
    raise TraceError(f"{ts} lies outside the observed time of process {proc}")


class _HappenedBefore:
    """Successor function over the union graph of local order, messages and clock synchronization"""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.receive_of = {e.msg_id: e for e in trace.all_events() if e.kind is EventKind.RECEIVE}
        self.by_time = sorted(trace.all_events(), key=lambda e: (trace.event_time(e), e.process, e.index))
        self.times = [trace.event_time(e) for e in self.by_time]

    def successors(self, event: Event) -> Iterator[Event]:
        events = self.trace.process_events(event.process)
        if event.index + 1 < len(events):
            yield events[event.index + 1]
        if event.kind is EventKind.SEND:
            yield self.receive_of[event.msg_id]
        # pt.j(B) - pt.i(A) > epsilon
        start = bisect.bisect_right(self.times, self.trace.event_time(event) + self.trace.clock_bound)
        for other in self.by_time[start:]:
            if other.process != event.process:
                yield other

    def reachable(self, source: Event) -> set[tuple[int, int]]:
        seen: set[tuple[int, int]] = set()
        queue = deque([source])
        while queue:
            event = queue.popleft()
            for nxt in self.successors(event):
                key = (nxt.process, nxt.index)
                if key not in seen:
                    seen.add(key)
                    queue.append(nxt)
        return seen


def happened_before(a: Event, b: Event, trace: Trace) -> bool:
    for event in (a, b):
        if not trace.contains(event):
            raise TraceError(f"{event} is not part of the trace")
    return (b.process, b.index) in _HappenedBefore(trace).reachable(a)


def happened_before_closure(trace: Trace) -> dict[tuple[int, int], set[tuple[int, int]]]:
    """All (process, index) pairs reachable from every event, computed with one graph"""
    graph = _HappenedBefore(trace)
    return {(e.process, e.index): graph.reachable(e) for e in trace.all_events()}


@dataclass(frozen=True, slots=True)
class SnapshotEvent:
    """
    The event a snapshot picks on one process

    Either one of the process' events, or a local event inserted at a time at which the process
    has no event; before counts the process' events preceding it.
    """

    process: int
    time: int
    before: int
    event: Event | None = None


class Frontier:
    """
    Happened-before between snapshot events, inserted ones included, on top of the trace's graph

    Trace events are the bits of an int mask. A chain between two snapshot events that passes a
    third one already links that one to the first, so a snapshot can be checked pair by pair.
    """

    def __init__(self, trace: Trace):
        self.trace = trace
        events = list(trace.all_events())
        self.bit = {(e.process, e.index): 1 << i for i, e in enumerate(events)}
        graph = _HappenedBefore(trace)
        # reach[i]: events reachable from event i, i included
        self.reach = [sum(self.bit[k] for k in graph.reachable(e)) | 1 << i for i, e in enumerate(events)]
        self.local = [[self.bit[(e.process, e.index)] for e in process_events] for process_events in trace.events]
        self.own = [sum(bits) for bits in self.local]
        sends = {e.msg_id: self.bit[(e.process, e.index)] for e in events if e.kind is EventKind.SEND}
        self.sender = {(e.process, e.index): sends[e.msg_id] for e in events if e.kind is EventKind.RECEIVE}

        by_time = sorted(events, key=trace.event_time)
        self.times = [trace.event_time(e) for e in by_time]
        self.prefix = [0]
        for e in by_time:
            self.prefix.append(self.prefix[-1] | self.bit[(e.process, e.index)])
        self.suffix = [0]
        for e in reversed(by_time):
            self.suffix.append(self.suffix[-1] | self.bit[(e.process, e.index)])
        self.suffix.reverse()

    def _closure(self, mask: int) -> int:
        out = 0
        while mask:
            low = mask & -mask
            out |= self.reach[low.bit_length() - 1]
            mask ^= low
        return out

    def reach_after(self, s: SnapshotEvent) -> int:
        """Trace events that s happened before, its own event included"""
        if s.event is not None:
            return self._closure(self.bit[(s.event.process, s.event.index)])
        later = sum(self.local[s.process - 1][s.before :])
        # pt.j(B) - pt.i(A) > epsilon
        skewed = self.suffix[bisect.bisect_right(self.times, s.time + self.trace.clock_bound)]
        return self._closure(later | (skewed & ~self.own[s.process - 1]))

    def reaching(self, s: SnapshotEvent) -> int:
        """Trace events with a direct edge to s, its own event included"""
        earlier = sum(self.local[s.process - 1][: s.before])
        skewed = self.prefix[bisect.bisect_left(self.times, s.time - self.trace.clock_bound)]
        mask = earlier | (skewed & ~self.own[s.process - 1])
        if s.event is not None:
            key = (s.event.process, s.event.index)
            mask |= self.bit[key] | self.sender.get(key, 0)
        return mask

    def precedes(self, a: SnapshotEvent, b: SnapshotEvent) -> bool:
        if b.time - a.time > self.trace.clock_bound:
            return True
        return bool(self.reach_after(a) & self.reaching(b))


class PredicateForm(str, Enum):
    CONJUNCTION = "conjunction"
    EXACTLY_K = "exactly"
    AT_LEAST_K = "atleast"
    SUM_EQ = "sum-eq"
    SUM_GEQ = "sum-geq"
    PAIRWISE_CONFLICT = "pairwise"
    CNF = "cnf"


_K_FORMS = (PredicateForm.EXACTLY_K, PredicateForm.AT_LEAST_K, PredicateForm.SUM_EQ, PredicateForm.SUM_GEQ)


@dataclass(frozen=True)
class Predicate:
    form: PredicateForm
    k: int = 0
    clauses: tuple[tuple[int, ...], ...] = ()
    domain: Domain = Domain.BOOL

    @classmethod
    def conjunction(cls) -> Predicate:
        return cls(PredicateForm.CONJUNCTION)

    @classmethod
    def exactly(cls, k: int) -> Predicate:
        return cls(PredicateForm.EXACTLY_K, k)

    @classmethod
    def at_least(cls, k: int) -> Predicate:
        return cls(PredicateForm.AT_LEAST_K, k)

    @classmethod
    def sum_eq(cls, k: int) -> Predicate:
        return cls(PredicateForm.SUM_EQ, k, domain=Domain.INT)

    @classmethod
    def sum_geq(cls, k: int) -> Predicate:
        return cls(PredicateForm.SUM_GEQ, k, domain=Domain.INT)

    @classmethod
    def pairwise_conflict(cls) -> Predicate:
        return cls(PredicateForm.PAIRWISE_CONFLICT)

    @classmethod
    def cnf(cls, clauses: Sequence[Sequence[int]]) -> Predicate:
        return cls(PredicateForm.CNF, clauses=tuple(tuple(clause) for clause in clauses))

    def __str__(self) -> str:
        if self.form in _K_FORMS:
            return f"{self.form.value}:{self.k}"
        if self.form is PredicateForm.CNF:
            return f"cnf({len(self.clauses)} clauses)"
        return self.form.value

    def validate(self, n: int):
        if self.form in _K_FORMS and not 0 <= self.k <= n:
            raise TraceError(f"k={self.k} is outside 0..{n}")
        for clause in self.clauses:
            if not clause or any(lit == 0 or abs(lit) > n for lit in clause):
                raise TraceError(f"clause {clause} does not range over v_1..v_{n}")


def parse_dimacs(text: str) -> tuple[int, list[list[int]]]:
    """
    Parse DIMACS CNF text

    Returns:
        - number of variables (from the "p cnf" header, or the largest variable used)
        - list of clauses, each a list of non-zero literals
    """
    num_vars = 0
    clauses: list[list[int]] = []
    current: list[int] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(("c", "%")):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise TraceError(f"Invalid DIMACS header: {line!r}")
            num_vars = int(parts[2])
            continue
        for lit in map(int, line.split()):
            if lit == 0:
                if current:
                    clauses.append(current)
                current = []
            else:
                current.append(lit)
    if current:
        clauses.append(current)
    used = max((abs(lit) for clause in clauses for lit in clause), default=0)
    return max(num_vars, used), clauses


def read_dimacs(path: str) -> tuple[int, list[list[int]]]:
    with open(path, encoding="utf-8") as f:
        return parse_dimacs(f.read())


def parse_predicate(text: str, domain: Domain | None = None) -> Predicate:
    """
    Parse the command line form of a predicate

    Inputs:
        - text: conjunction, pairwise, exactly:K, atleast:K, sum-eq:K, sum-geq:K or cnf:PATH
        - domain: overrides the default variable domain of the form
    """
    name, _, arg = text.partition(":")
    try:
        form = PredicateForm(name)
    except ValueError:
        raise TraceError(f"Unknown predicate {text!r}") from None
    if form is PredicateForm.CNF:
        _, clauses = read_dimacs(arg)
        predicate = Predicate.cnf(clauses)
    elif form in _K_FORMS:
        if not arg.isdigit():
            raise TraceError(f"Predicate {name} needs a count, e.g. {name}:5")
        sum_form = form in (PredicateForm.SUM_EQ, PredicateForm.SUM_GEQ)
        predicate = Predicate(form, int(arg), domain=Domain.INT if sum_form else Domain.BOOL)
    else:
        predicate = Predicate(form)
    if domain is not None:
        predicate = Predicate(predicate.form, predicate.k, predicate.clauses, domain)
    return predicate


def _check_domain(values: Sequence[Value], domain: Domain):
    for proc, value in enumerate(values, start=1):
        if domain is Domain.BOOL and type(value) is not bool:
            raise TraceError(f"v_{proc}={value!r} is not a boolean")
        if domain is Domain.INT and (type(value) is not int or value not in (0, 1)):
            raise TraceError(f"v_{proc}={value!r} is not an integer in {{0,1}}")


def eval_predicate(p: Predicate, values: Sequence[Value]) -> bool:
    """Truth of the predicate when process i holds values[i - 1]"""
    _check_domain(values, p.domain)
    p.validate(len(values))
    total = sum(int(v) for v in values)
    if p.form is PredicateForm.CONJUNCTION:
        return total == len(values)
    if p.form in (PredicateForm.EXACTLY_K, PredicateForm.SUM_EQ):
        return total == p.k
    if p.form in (PredicateForm.AT_LEAST_K, PredicateForm.SUM_GEQ):
        return total >= p.k
    if p.form is PredicateForm.PAIRWISE_CONFLICT:
        return total >= 2
    return all(any(bool(values[abs(lit) - 1]) == (lit > 0) for lit in clause) for clause in p.clauses)


@dataclass(frozen=True, slots=True)
class SnapshotEntry:
    """
    Snapshot timestamp of one process

    pt is the physical time of the snapshot event when it is not the HLC's l, e.g. for a local
    event inserted into a simulated run whose clock ran behind its HLC.
    """

    proc: int
    hlc: HlcTimestamp
    value: Value | None = None
    pt: int | None = None


@dataclass(frozen=True)
class SnapshotAssignment:
    """One timestamp (and value) per process, the candidate valid snapshot"""

    entries: tuple[SnapshotEntry, ...] = field(default_factory=tuple)

    @classmethod
    def from_lists(cls, stamps: Sequence[HlcTimestamp], values: Sequence[Value | None] | None = None) -> SnapshotAssignment:
        values = values if values is not None else [None] * len(stamps)
        return cls(tuple(SnapshotEntry(i, ts, v) for i, (ts, v) in enumerate(zip(stamps, values, strict=True), start=1)))

    @property
    def timestamps(self) -> list[HlcTimestamp]:
        return [e.hlc for e in self.entries]

    @property
    def values(self) -> list[Value | None]:
        return [e.value for e in self.entries]

    def to_records(self) -> list[dict]:
        records = []
        for e in self.entries:
            record = {"proc": e.proc, "hlc": str(e.hlc), "value": e.value}
            if e.pt is not None:
                record["pt"] = e.pt
            records.append(record)
        return records

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> SnapshotAssignment:
        return cls(tuple(SnapshotEntry(r["proc"], HlcTimestamp.parse(r["hlc"]), r.get("value"), r.get("pt")) for r in records))


def _snapshot_entries(s: SnapshotAssignment, n: int) -> list[SnapshotEntry]:
    if sorted(e.proc for e in s.entries) != list(range(1, n + 1)):
        raise TraceError(f"a snapshot needs exactly one entry per process 1..{n}")
    return sorted(s.entries, key=lambda e: e.proc)


def snapshot_event(entry: SnapshotEntry, trace: Trace) -> SnapshotEvent:
    """
    The event an entry picks: the process' event with that HLC, or a local event inserted at the
    entry's time

    Raises:
        - TraceError if the time is taken by another event of the process, or if the HLC and the
          time place the inserted event at different positions
    """
    events = trace.process_events(entry.proc)
    for event in events:
        if event.hlc == entry.hlc and entry.pt in (None, event.pt):
            return SnapshotEvent(entry.proc, trace.event_time(event), event.index, event)
    if trace.subticks and entry.hlc.c >= trace.subticks:
        raise TraceError(f"P{entry.proc}: counter of {entry.hlc} does not fit into {trace.subticks} subticks")
    time = trace.stamp_time(entry.hlc, entry.pt)
    times = [trace.event_time(e) for e in events]
    before = bisect.bisect_left(times, time)
    if before < len(times) and times[before] == time:
        raise TraceError(f"P{entry.proc} already has an event at time {time}, {entry.hlc} is not one of them")
    if before != sum(hlc_less(e.hlc, entry.hlc) for e in events):
        raise TraceError(f"P{entry.proc}: {entry.hlc} and time {time} fall between different events")
    return SnapshotEvent(entry.proc, time, before)


def local_event_entry(trace: Trace, proc: int, time: int, value: Value | None = None) -> SnapshotEntry:
    """Entry of a local event inserted into P_proc at a time without any of its events"""
    if trace.subticks:
        return SnapshotEntry(proc, HlcTimestamp.from_combined(time, trace.subticks), value)
    events = trace.process_events(proc)
    before = bisect.bisect_left([e.pt for e in events], time)
    stamp = advance_local(events[before - 1].hlc, time) if before else HlcTimestamp(time, 0)
    return SnapshotEntry(proc, stamp, value, pt=time)


def _value_after(trace: Trace, proc: int, count: int) -> Value:
    value = trace.initial_value(proc)
    for event in trace.process_events(proc)[:count]:
        if event.kind is EventKind.VAR:
            value = event.new_value  # type: ignore[assignment]
    return value


def is_consistent(s: SnapshotAssignment, trace: Trace) -> bool:
    """
    Check that no two snapshot events are ordered by happened-before

    Every entry names one of its process' events or a local event inserted at its time (see
    snapshot_event); the relation is the trace's, extended to these events.
    """
    members = [snapshot_event(entry, trace) for entry in _snapshot_entries(s, trace.n)]
    frontier = Frontier(trace)
    return not any(frontier.precedes(a, b) or frontier.precedes(b, a) for a, b in combinations(members, 2))


def snapshot_values(s: SnapshotAssignment, trace: Trace) -> list[Value]:
    """Variable values right after the snapshot's events"""
    values = []
    for entry in _snapshot_entries(s, trace.n):
        member = snapshot_event(entry, trace)
        values.append(_value_after(trace, entry.proc, member.before + (member.event is not None)))
    return values
