"""Discrete-tick simulation of n partially synchronous processes producing HLC-stamped traces"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from hlcmon.hlc import ZERO, HlcTimestamp, advance_local, advance_receive
from hlcmon.trace_model import Domain, Event, EventKind, Message, Trace, Value, validate_trace

logger = logging.getLogger(__name__)

# ticks per block of pre-drawn coin flips
_DRAW_BLOCK = 65536


@dataclass(frozen=True)
class SyntheticWorkload:
    """v_i flips with probability beta per tick once it has held its value for interval ticks"""

    beta: float = 0.01
    interval: int = 10
    domain: Domain = Domain.BOOL


@dataclass(frozen=True)
class ExclusiveAccessWorkload:
    """
    Time division multiplexing of a shared resource

    Process i owns the slots [(k*n + i - 1) * slot, (k*n + i) * slot) of its own clock and accesses
    the resource (v_i = True) from the start of the slot until guard ticks before its end; with
    probability overrun_prob it holds on for overrun extra ticks.

    Without overruns, guard >= epsilon keeps accesses of different processes ordered by
    happened-before. The HLC-based monitor only rules them out for guard > 2 * epsilon once
    messages flow: a receive may carry a process' l up to epsilon past its own clock, which
    stretches the access in HLC time.
    """

    slot: int = 10_000
    guard: int = 1000
    overrun: int = 100
    overrun_prob: float = 0.1

    @property
    def domain(self) -> Domain:
        return Domain.BOOL


Workload = SyntheticWorkload | ExclusiveAccessWorkload


@dataclass(frozen=True)
class ScenarioConfig:
    """Defaults: 10 processes, 0.01 ms ticks, epsilon 10 ms, delta 1 ms, 1000 msgs/s, 1 s of run time"""

    n: int = 10
    tick_ms: float = 0.01
    epsilon: int = 1000
    delta: int = 100
    delta_min: int | None = None
    delta_max: int | None = None
    mfr: float = 0.01
    duration: int = 100_000
    seed: int = 0
    workload: Workload = field(default_factory=SyntheticWorkload)
    # upper bound (ticks) of the random delay on each process' channel to the monitor
    link_delay: int = 0

    @property
    def domain(self) -> Domain:
        return self.workload.domain

    @property
    def has_delay_range(self) -> bool:
        return self.delta_min is not None or self.delta_max is not None

    def validate(self):
        def fail(reason: str):
            raise ValueError(f"Invalid scenario config: {reason}")

        if self.n < 1:
            fail(f"n={self.n} must be positive")
        if self.tick_ms <= 0:
            fail(f"tick_ms={self.tick_ms} must be positive")
        for name in ("epsilon", "delta", "duration"):
            if getattr(self, name) <= 0:
                fail(f"{name}={getattr(self, name)} must be positive")
        if self.has_delay_range:
            if self.delta_min is None or self.delta_max is None:
                fail("delta_min and delta_max must be given together")
            elif not 0 < self.delta_min <= self.delta_max:
                fail(f"need 0 < delta_min <= delta_max, got [{self.delta_min}, {self.delta_max}]")
        if not 0 <= self.mfr <= 1:
            fail(f"mfr={self.mfr} is not a probability")
        if self.link_delay < 0:
            fail(f"link_delay={self.link_delay} must be non-negative")
        if not 0 <= self.seed < 2**64:
            fail(f"seed={self.seed} must fit in 64 bits")
        w = self.workload
        if isinstance(w, SyntheticWorkload):
            if not 0 <= w.beta <= 1:
                fail(f"beta={w.beta} is not a probability")
            if w.interval <= 0:
                fail(f"interval={w.interval} must be positive")
        else:
            if not 0 <= w.overrun_prob <= 1:
                fail(f"overrun_prob={w.overrun_prob} is not a probability")
            if not 0 <= w.guard < w.slot:
                fail(f"need 0 <= guard < slot, got guard={w.guard}, slot={w.slot}")
            if not 0 <= w.overrun < w.guard + (self.n - 1) * w.slot:
                fail(f"overrun={w.overrun} would run into the process' own next slot")


@dataclass
class ProcessState:
    proc: int
    offset: int
    value: Value
    hlc: HlcTimestamp = ZERO
    hold_until: int = 0
    overruns: int = 0
    events: list[Event] = field(default_factory=list)

    def record(self, kind: EventKind, pt: int, hlc: HlcTimestamp, **kwargs) -> Event:
        self.hlc = hlc
        event = Event(self.proc, len(self.events), kind, pt, hlc, **kwargs)
        self.events.append(event)
        return event


class _Action(IntEnum):
    # value = order of actions at one process within a tick; a slot closes before anything else
    SLOT_END = 0
    DELIVER = 1
    SLOT_START = 2
    CHANGE = 3
    SEND = 4


@dataclass(order=True)
class _Scheduled:
    t: int
    action: _Action
    proc: int
    seq: int
    payload: tuple = field(compare=False, default=())


class _EventQueue:
    """Deterministic min-heap on (tick, action, process, submission order)"""

    def __init__(self):
        self._heap: list[_Scheduled] = []
        self._seq = 0

    def push(self, t: int, action: _Action, proc: int, payload: tuple = ()):
        self._seq += 1
        heapq.heappush(self._heap, _Scheduled(t, action, proc, self._seq, payload))

    def pop(self) -> _Scheduled:
        return heapq.heappop(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)


def inject_exclusive_access_fault(state: ProcessState, rng: np.random.Generator, workload: ExclusiveAccessWorkload) -> int:
    """
    Decide whether the current access overruns its slot

    Returns:
        - the number of ticks the access interval is extended by (0 or workload.overrun)
    """
    if workload.overrun_prob > 0 and rng.random() < workload.overrun_prob:
        state.overruns += 1
        return workload.overrun
    return 0


def _flip(value: Value) -> Value:
    return (not value) if type(value) is bool else 1 - value


def _slot_start(proc: int, round_: int, n: int, slot: int) -> int:
    return (round_ * n + proc - 1) * slot


def run(config: ScenarioConfig) -> Trace:
    """
    Simulate one run

    Time advances in ticks of real time t in [0, duration); process i reads its physical clock as
    pt = t + offset_i with offsets drawn once from [0, epsilon]. Everything random is drawn from
    numpy's default_rng(seed), so the same config always yields the same trace.
    """
    config.validate()
    n, duration = config.n, config.duration
    workload = config.workload
    logger.info(f"### Simulating {n} processes for {duration} ticks (seed {config.seed}, {type(workload).__name__})")

    rng = np.random.default_rng(config.seed)
    offsets = rng.integers(0, config.epsilon, size=n, endpoint=True)
    states = [ProcessState(i + 1, int(offsets[i]), config.domain.initial_value()) for i in range(n)]
    queue = _EventQueue()

    # coin flips for every tick are drawn up front, one block at a time
    for block_start in range(0, duration, _DRAW_BLOCK):
        size = min(_DRAW_BLOCK, duration - block_start)
        if n > 1:
            for t, i in np.argwhere(rng.random((size, n)) < config.mfr):
                queue.push(block_start + int(t), _Action.SEND, int(i) + 1)
        if isinstance(workload, SyntheticWorkload):
            for t, i in np.argwhere(rng.random((size, n)) < workload.beta):
                queue.push(block_start + int(t), _Action.CHANGE, int(i) + 1)

    if isinstance(workload, ExclusiveAccessWorkload):
        for state in states:
            start = _slot_start(state.proc, 0, n, workload.slot)
            if start - state.offset < duration:
                queue.push(max(0, start - state.offset), _Action.SLOT_START, state.proc, (0,))

    messages: list[Message] = []
    next_msg_id = 0
    while queue:
        item = queue.pop()
        state = states[item.proc - 1]
        t, pt = item.t, item.t + state.offset

        if item.action is _Action.DELIVER:
            msg_id, sender, send_hlc = item.payload
            hlc = advance_receive(state.hlc, send_hlc, pt)
            state.record(EventKind.RECEIVE, pt, hlc, msg_id=msg_id)
            messages.append(Message(msg_id, sender, send_hlc, state.proc, hlc))

        elif item.action is _Action.SEND:
            if config.has_delay_range:
                delay = int(rng.integers(config.delta_min, config.delta_max, endpoint=True))  # type: ignore[arg-type]
            else:
                delay = config.delta
            dest = int(rng.integers(1, n))
            dest += dest >= state.proc
            if t + delay >= duration:
                logger.debug(f"P{state.proc} skips a send at t={t}: it would arrive after the run")
                continue
            hlc = advance_local(state.hlc, pt)
            state.record(EventKind.SEND, pt, hlc, msg_id=next_msg_id)
            queue.push(t + delay, _Action.DELIVER, dest, (next_msg_id, state.proc, hlc))
            next_msg_id += 1

        elif item.action is _Action.CHANGE:
            assert isinstance(workload, SyntheticWorkload)
            if pt < state.hold_until:
                continue
            new_value = _flip(state.value)
            state.record(EventKind.VAR, pt, advance_local(state.hlc, pt), old_value=state.value, new_value=new_value)
            state.value = new_value
            state.hold_until = pt + workload.interval

        elif item.action is _Action.SLOT_START:
            assert isinstance(workload, ExclusiveAccessWorkload)
            (round_,) = item.payload
            start = _slot_start(state.proc, round_, n, workload.slot)
            extension = inject_exclusive_access_fault(state, rng, workload)
            end_t = max(t + 1, start + workload.slot - workload.guard + extension - state.offset)
            state.record(EventKind.VAR, pt, advance_local(state.hlc, pt), old_value=False, new_value=True)
            state.value = True
            if end_t < duration:
                queue.push(end_t, _Action.SLOT_END, state.proc)
            next_start = _slot_start(state.proc, round_ + 1, n, workload.slot)
            if next_start - state.offset < duration:
                queue.push(next_start - state.offset, _Action.SLOT_START, state.proc, (round_ + 1,))

        else:
            state.record(EventKind.VAR, pt, advance_local(state.hlc, pt), old_value=True, new_value=False)
            state.value = False

    trace = Trace(
        n=n,
        epsilon=config.epsilon,
        events=tuple(tuple(s.events) for s in states),
        messages=tuple(sorted(messages, key=lambda m: m.msg_id)),
        horizon=HlcTimestamp(duration + config.epsilon, 0),
        domain=config.domain,
        offsets=tuple(s.offset for s in states),
    )
    validate_trace(trace)
    n_events = sum(len(s.events) for s in states)
    n_overruns = sum(s.overruns for s in states)
    logger.info(f"## Simulated {n_events} events, {len(messages)} messages, {n_overruns} overruns")
    return trace
