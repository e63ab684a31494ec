from dataclasses import replace
from itertools import permutations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hlcmon.hlc import HlcTimestamp as T
from hlcmon.hlc import advance_local, advance_receive, counter_base, hlc_less, hlc_within
from hlcmon.oracle import brute_force_sat, find_valid_snapshot, gen_satisfiability_instance, reachable_assignments
from hlcmon.reporter import reports_from_trace, segments_from_reports, trace_from_reports
from hlcmon.simulator import ScenarioConfig, SyntheticWorkload, run
from hlcmon.trace_model import (
    Event,
    EventKind,
    SnapshotAssignment,
    SnapshotEntry,
    Trace,
    happened_before_closure,
    is_consistent,
    local_event_entry,
    value_segments,
)

from tests.trace_factory import small_traces

timestamps = st.builds(T, st.integers(0, 10**6), st.integers(0, 50))
physical = st.integers(0, 10**6)


@st.composite
def cnf_formulas(draw, max_vars: int = 4):
    n = draw(st.integers(1, max_vars))
    literal = st.integers(1, n).flatmap(lambda v: st.sampled_from([v, -v]))
    clauses = draw(st.lists(st.lists(literal, min_size=1, max_size=3), min_size=1, max_size=6))
    return n, clauses


@given(timestamps, physical)
def test_advance_local_increases(current, pt):
    new = advance_local(current, pt)
    assert hlc_less(current, new)
    assert new.l == max(current.l, pt)


@given(timestamps, timestamps, physical)
def test_advance_receive_increases(current, msg, pt):
    new = advance_receive(current, msg, pt)
    assert hlc_less(current, new)
    assert hlc_less(msg, new)
    assert new.l == max(current.l, msg.l, pt)


@given(timestamps, timestamps, st.integers(1, 1000))
def test_combined_form(a, b, epsilon):
    c_prime = counter_base([a, b])
    assert hlc_less(a, b) == (a.combined(c_prime) < b.combined(c_prime))
    assert T.from_combined(a.combined(c_prime), c_prime) == a
    assert hlc_within(a, b, epsilon) == (abs(a.combined(c_prime) - b.combined(c_prime)) <= c_prime * epsilon)


@settings(max_examples=60, deadline=None)
@given(cnf_formulas(), st.integers(0, 1000))
def test_satisfiability_instances(formula, seed):
    n, clauses = formula
    trace, predicate = gen_satisfiability_instance(clauses, n, epsilon=12, seed=seed)
    assert (find_valid_snapshot(trace, predicate) is not None) == brute_force_sat(clauses, n)
    assert len(reachable_assignments(trace)) == 2**n


def _check_hlc(trace: Trace):
    """Monotonicity, the direct happened-before edges and |l - pt| <= epsilon"""
    for events in trace.events:
        for a, b in zip(events, events[1:], strict=False):
            assert hlc_less(a.hlc, b.hlc)
        for e in events:
            assert 0 <= e.hlc.l - e.pt <= trace.epsilon
    for m in trace.messages:
        assert hlc_less(m.send_hlc, m.recv_hlc)
    # pt(b) - pt(a) > epsilon => hlc(a) < hlc(b), via the largest stamp of all events far enough back
    by_pt = sorted(trace.all_events(), key=lambda e: e.pt)
    latest, i = None, 0
    for b in by_pt:
        while i < len(by_pt) and by_pt[i].pt < b.pt - trace.epsilon:
            latest = by_pt[i].hlc if latest is None else max(latest, by_pt[i].hlc)
            i += 1
        assert latest is None or hlc_less(latest, b.hlc)


def _random_config(seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        n=2 + seed % 9,
        epsilon=1 + seed % 30,
        delta=1,
        delta_min=1,
        delta_max=1 + seed % 20,
        mfr=0.02 + 0.01 * (seed % 7),
        duration=200,
        seed=seed,
        workload=SyntheticWorkload(beta=0.05, interval=1 + seed % 5),
    )


def test_hlc_on_traces():
    for seed in range(200):
        _check_hlc(run(_random_config(seed)))


@pytest.mark.slow
def test_hlc_on_many_traces():
    for seed in range(10_000):
        _check_hlc(run(_random_config(seed)))


def test_happened_before_implies_hlc_order():
    for trace in small_traces(30):
        events = {(e.process, e.index): e for e in trace.all_events()}
        for source, reachable in happened_before_closure(trace).items():
            for target in reachable:
                assert hlc_less(events[source].hlc, events[target].hlc)


def test_reports_rebuild_value_functions():
    for trace in small_traces(30, start_seed=500):
        segments = segments_from_reports(reversed(reports_from_trace(trace)))
        for proc in range(1, trace.n + 1):
            assert segments[proc] == value_segments(trace, proc)
            changes = [e for e in trace.process_events(proc) if e.kind is EventKind.VAR]
            assert len(segments[proc]) == len(changes) + 1


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 400), st.booleans(), st.data())
def test_is_consistent_matches_happened_before(seed, rebuild, data):
    [trace] = small_traces(1, start_seed=seed)
    if rebuild:
        trace = trace_from_reports(reports_from_trace(trace), trace.epsilon, trace.n)
    events = [list(trace.process_events(proc)) for proc in range(1, trace.n + 1)]
    entries, members = [], []
    for proc, own in enumerate(events, start=1):
        taken = {trace.event_time(e) for e in own}
        free = [t for t in range(trace.end_time) if t not in taken]
        pick = data.draw(st.integers(0, len(own) + len(free) - 1))
        if pick < len(own):
            entries.append(SnapshotEntry(proc, own[pick].hlc, pt=own[pick].pt))
            members.append(own[pick])
            continue
        time = free[pick - len(own)]
        entry = local_event_entry(trace, proc, time)
        position = sum(trace.event_time(e) < time for e in own)
        inserted = Event(proc, position, EventKind.LOCAL, entry.hlc.l if entry.pt is None else entry.pt, entry.hlc)
        own.insert(position, inserted)
        entries.append(entry)
        members.append(inserted)

    # the naive relation: insert the local events into the trace and follow happened-before
    augmented = replace(trace, events=tuple(tuple(replace(e, index=i) for i, e in enumerate(own)) for own in events))
    keys = [(proc, next(i for i, e in enumerate(own) if e is member)) for proc, (own, member) in enumerate(zip(events, members, strict=True), start=1)]
    closure = happened_before_closure(augmented)
    ordered = any(b in closure[a] for a, b in permutations(keys, 2))
    assert is_consistent(SnapshotAssignment(tuple(entries)), trace) is not ordered
