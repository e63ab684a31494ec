"""Exhaustive valid snapshot search for small traces, and SAT instances encoded as traces"""

from __future__ import annotations

import bisect
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from itertools import pairwise, product

import numpy as np

from hlcmon.hlc import ZERO, HlcTimestamp, advance_local
from hlcmon.trace_model import (
    Domain,
    Event,
    EventKind,
    Frontier,
    Predicate,
    SnapshotAssignment,
    SnapshotEntry,
    SnapshotEvent,
    Trace,
    Value,
    eval_predicate,
    is_consistent,
    local_event_entry,
    read_dimacs,
    snapshot_values,
    validate_trace,
)

logger = logging.getLogger(__name__)


class OracleLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleLimits:
    max_processes: int = 4
    max_ticks: int = 40
    max_events: int = 6

    def check(self, trace: Trace):
        if min(self.max_processes, self.max_ticks, self.max_events) <= 0:
            raise ValueError(f"Oracle limits must be positive: {self}")
        if trace.n > self.max_processes:
            raise OracleLimitError(f"{trace.n} processes exceed the oracle limit of {self.max_processes}")
        if trace.horizon.l > self.max_ticks:
            raise OracleLimitError(f"horizon {trace.horizon} exceeds the oracle limit of {self.max_ticks} ticks")
        for proc, events in enumerate(trace.events, start=1):
            if len(events) > self.max_events:
                raise OracleLimitError(f"P{proc} has {len(events)} events, the oracle limit is {self.max_events}")


@dataclass(frozen=True, slots=True)
class _Atom:
    """
    Snapshot events of one process at times lo..hi (inclusive)

    All of them see the same value and have the same happened-before links to trace events:
    after holds the events they precede, before the events with a direct edge to them.
    """

    lo: int
    hi: int
    value: Value
    first: SnapshotEvent
    after: int
    before: int


def _atoms(trace: Trace, frontier: Frontier, proc: int) -> list[_Atom]:
    events = trace.process_events(proc)
    times = [trace.event_time(e) for e in events]
    values = [trace.initial_value(proc)]
    for event in events:
        values.append(event.new_value if event.kind is EventKind.VAR else values[-1])  # type: ignore[arg-type]

    def atom(lo: int, hi: int, before: int, event: Event | None = None) -> _Atom:
        first = SnapshotEvent(proc, lo, before, event)
        value = values[before + (event is not None)]
        return _Atom(lo, hi, value, first, frontier.reach_after(first), frontier.reaching(first))

    atoms = [atom(t, t, e.index, e) for t, e in zip(times, events, strict=True)]
    # inserted events: free times, split where the set of events more than epsilon away changes
    bound, end = trace.clock_bound, trace.end_time
    cuts = {0, end, *times, *(t + 1 for t in times)}
    for other in trace.all_events():
        if other.process != proc:
            cuts.update((trace.event_time(other) - bound, trace.event_time(other) + bound + 1))
    taken = set(times)
    for lo, nxt in pairwise(sorted(c for c in cuts if 0 <= c <= end)):
        if lo not in taken:
            atoms.append(atom(lo, nxt - 1, bisect.bisect_left(times, lo)))
    return atoms


def _linked(a: _Atom, b: _Atom) -> bool:
    return bool(a.after & b.before) or bool(b.after & a.before)


def _search(trace: Trace, visit: Callable[[list[_Atom]], bool]) -> bool:
    """
    Depth-first search over one atom per process

    Only combinations whose events are pairwise concurrent reach visit: no two are linked through
    trace events, and times within the atoms can be picked at most epsilon apart. The search stops
    as soon as visit returns True.
    """
    frontier = Frontier(trace)
    atoms = [_atoms(trace, frontier, proc) for proc in range(1, trace.n + 1)]
    bound = trace.clock_bound
    chosen: list[_Atom] = []

    def dfs(proc: int, max_lo: int, min_hi: int) -> bool:
        if proc > trace.n:
            return visit(chosen)
        for atom in atoms[proc - 1]:
            lo, hi = max(max_lo, atom.lo), min(min_hi, atom.hi)
            if lo - hi > bound or any(_linked(a, atom) for a in chosen):
                continue
            chosen.append(atom)
            if dfs(proc + 1, lo, hi):
                return True
            chosen.pop()
        return False

    return dfs(1, 0, trace.end_time)


def _witness(trace: Trace, chosen: Sequence[_Atom]) -> SnapshotAssignment:
    top = max(a.lo for a in chosen)
    entries = []
    for atom in chosen:
        event = atom.first.event
        if event is not None:
            entries.append(SnapshotEntry(event.process, event.hlc, atom.value, pt=event.pt))
        else:
            entries.append(local_event_entry(trace, atom.first.process, min(atom.hi, top), atom.value))
    return SnapshotAssignment(tuple(entries))


def _prepare(trace: Trace, epsilon: int | None, limits: OracleLimits | None) -> Trace:
    (limits or OracleLimits()).check(trace)
    if epsilon is not None and epsilon != trace.epsilon:
        trace = replace(trace, epsilon=epsilon)
    if trace.epsilon <= 0:
        raise ValueError(f"epsilon={trace.epsilon} must be positive")
    return trace


def find_valid_snapshot(
    trace: Trace,
    p: Predicate,
    epsilon: int | None = None,
    limits: OracleLimits | None = None,
) -> SnapshotAssignment | None:
    """
    Search every snapshot of the trace for one that is consistent and satisfies p

    A snapshot picks one event per process, either one of its events or a local event inserted at
    a time without any; consistent means no two of them are ordered by happened-before.

    Inputs:
        - trace: a trace within the oracle limits
        - p: the predicate to detect
        - epsilon: clock synchronization bound (default: the trace's)
        - limits: size limits, OracleLimits() by default
    Returns:
        - a valid snapshot, or None if there is none
    """
    trace = _prepare(trace, epsilon, limits)
    p.validate(trace.n)
    found: list[SnapshotAssignment] = []

    def visit(chosen: list[_Atom]) -> bool:
        if eval_predicate(p, [a.value for a in chosen]):
            found.append(_witness(trace, chosen))
            return True
        return False

    _search(trace, visit)
    if not found:
        logger.debug(f"# oracle: no valid snapshot for {p}")
        return None
    witness = found[0]
    if not (is_consistent(witness, trace) and eval_predicate(p, snapshot_values(witness, trace))):
        raise RuntimeError(f"oracle produced an invalid witness {witness.to_records()}")
    return witness


def reachable_assignments(
    trace: Trace, epsilon: int | None = None, limits: OracleLimits | None = None
) -> set[tuple[Value, ...]]:
    """All combinations of variable values that some consistent snapshot observes"""
    trace = _prepare(trace, epsilon, limits)
    seen: set[tuple[Value, ...]] = set()

    def visit(chosen: list[_Atom]) -> bool:
        seen.add(tuple(a.value for a in chosen))
        return False

    _search(trace, visit)
    return seen




def brute_force_sat(clauses: Sequence[Sequence[int]], num_vars: int) -> bool:
    """Truth table check of a CNF formula"""
    return any(
        all(any(bits[abs(lit) - 1] == (lit > 0) for lit in clause) for clause in clauses)
        for bits in product((False, True), repeat=num_vars)
    )


def gen_satisfiability_instance(
    clauses: Sequence[Sequence[int]], num_vars: int, epsilon: int, seed: int = 0
) -> tuple[Trace, Predicate]:
    """
    Encode a CNF formula as a monitoring problem

    Each of the num_vars processes starts with v_i = False and sets it to True once, at a distinct
    random tick in (0, epsilon); there are no messages. Every truth assignment is then observed by
    some consistent snapshot, so a valid snapshot exists iff the formula is satisfiable.

    Returns:
        - the trace (horizon <2*epsilon, 0>) and the CNF predicate over v_1..v_num_vars
    """
    if not clauses:
        raise ValueError("the formula needs at least one clause")
    if not 0 < num_vars < epsilon:
        raise ValueError(f"need 0 < num_vars < epsilon to place distinct ticks in (0, {epsilon}), got num_vars={num_vars}")
    predicate = Predicate.cnf(clauses)
    predicate.validate(num_vars)
    rng = np.random.default_rng(seed)
    ticks = rng.choice(np.arange(1, epsilon), size=num_vars, replace=False)
    events = []
    for proc, tick in enumerate(ticks, start=1):
        hlc = advance_local(ZERO, int(tick))
        events.append((Event(proc, 0, EventKind.VAR, int(tick), hlc, old_value=False, new_value=True),))
    trace = Trace(
        n=num_vars,
        epsilon=epsilon,
        events=tuple(events),
        messages=(),
        horizon=HlcTimestamp(2 * epsilon, 0),
        domain=Domain.BOOL,
    )
    validate_trace(trace)
    return trace, predicate


def assignment_snapshot(trace: Trace, assignment: Sequence[bool]) -> SnapshotAssignment:
    """
    The snapshot of a generated instance observing the given truth assignment

    False processes are cut before their only event, True processes right at it.
    """
    stamps = []
    for proc, value in enumerate(assignment, start=1):
        (event,) = trace.process_events(proc)
        stamps.append(event.hlc if value else ZERO)
    return SnapshotAssignment.from_lists(stamps, list(assignment))


def read_cnf_instance(path: str, epsilon: int, seed: int = 0) -> tuple[Trace, Predicate]:
    num_vars, clauses = read_dimacs(path)
    logger.info(f"## {path}: {num_vars} variables, {len(clauses)} clauses")
    return gen_satisfiability_instance(clauses, num_vars, epsilon, seed)


def random_cnf(num_vars: int, num_clauses: int, seed: int = 0, width: int = 3) -> list[list[int]]:
    """Clauses of up to width distinct variables with random signs"""
    rng = np.random.default_rng(seed)
    clauses = []
    for _ in range(num_clauses):
        size = int(rng.integers(1, min(width, num_vars), endpoint=True))
        chosen = rng.choice(np.arange(1, num_vars + 1), size=size, replace=False)
        signs = rng.choice((-1, 1), size=size)
        clauses.append([int(v * s) for v, s in zip(chosen, signs, strict=True)])
    return clauses
