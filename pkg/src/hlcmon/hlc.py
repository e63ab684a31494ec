"""Hybrid logical clocks: timestamps, update rules and the comparisons the monitor relies on"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

MAX_TICKS = 2**64 - 1
MAX_COUNTER = 2**16 - 1
# smallest c' used when folding <l,c> into one integer
MIN_COUNTER_BASE = 4


class HlcOverflowError(RuntimeError):
    pass


@dataclass(frozen=True, order=True, slots=True)
class HlcTimestamp:
    """
    HLC timestamp <l,c>

    The dataclass ordering compares (l, c) lexicographically, which is exactly the HLC order.
    """

    l: int
    c: int = 0

    def __post_init__(self):
        if self.l < 0 or self.c < 0:
            raise ValueError(f"HLC components must be non-negative, got <{self.l},{self.c}>")
        if self.l > MAX_TICKS:
            raise HlcOverflowError(f"l={self.l} exceeds {MAX_TICKS}")
        if self.c > MAX_COUNTER:
            raise HlcOverflowError(f"c={self.c} exceeds {MAX_COUNTER}")

    def __str__(self) -> str:
        return f"{self.l}.{self.c}"

    @classmethod
    def parse(cls, text: str) -> HlcTimestamp:
        """Parse the trace-file form: "51.0" -> <51,0>"""
        l_part, sep, c_part = text.strip().partition(".")
        if not sep or not l_part.isdigit() or not c_part.isdigit():
            raise ValueError(f"Invalid HLC timestamp: {text!r}")
        return cls(int(l_part), int(c_part))

    def shifted(self, ticks: int) -> HlcTimestamp:
        """<l,c> -> <l+ticks,c>"""
        return HlcTimestamp(self.l + ticks, self.c)

    def combined(self, c_prime: int) -> int:
        """nl = c'*l + c"""
        return c_prime * self.l + self.c

    @classmethod
    def from_combined(cls, nl: int, c_prime: int) -> HlcTimestamp:
        l, c = divmod(nl, c_prime)
        return cls(l, c)


ZERO = HlcTimestamp(0, 0)


def advance_local(current: HlcTimestamp, pt: int) -> HlcTimestamp:
    """
    Timestamp a send or local event

    Inputs:
        - current: the process' latest HLC value
        - pt: the process' physical clock (ticks) at the event
    Returns:
        - the new HLC value, strictly greater than current
    """
    if pt < 0:
        raise ValueError(f"physical time must be non-negative, got {pt}")
    l = max(current.l, pt)
    c = current.c + 1 if l == current.l else 0
    return _stamp(l, c)


def advance_receive(current: HlcTimestamp, msg: HlcTimestamp, pt: int) -> HlcTimestamp:
    """
    Timestamp the receipt of a message carrying msg

    Inputs:
        - current: the receiver's latest HLC value
        - msg: the HLC value piggybacked on the message by the sender
        - pt: the receiver's physical clock (ticks) at the event
    Returns:
        - the new HLC value, strictly greater than both current and msg
    """
    if pt < 0:
        raise ValueError(f"physical time must be non-negative, got {pt}")
    l = max(current.l, msg.l, pt)
    if l == current.l == msg.l:
        c = max(current.c, msg.c) + 1
    elif l == current.l:
        c = current.c + 1
    elif l == msg.l:
        c = msg.c + 1
    else:
        c = 0
    return _stamp(l, c)


def _stamp(l: int, c: int) -> HlcTimestamp:
    if c > MAX_COUNTER:
        raise HlcOverflowError(f"HLC counter overflow at l={l}")
    return HlcTimestamp(l, c)


def hlc_less(a: HlcTimestamp, b: HlcTimestamp) -> bool:
    return (a.l < b.l) or (a.l == b.l and a.c < b.c)


def hlc_within(a: HlcTimestamp, b: HlcTimestamp, epsilon: int) -> bool:
    """
    Check whether two snapshot timestamps are at most epsilon apart

    |l_a - l_b| <= epsilon, where at the boundary tick (|l_a - l_b| == epsilon) the later
    timestamp's counter must not exceed the earlier one's, i.e., b <= <a.l+epsilon, a.c> and
    a <= <b.l+epsilon, b.c>. This is the relation |c'*l_a + c_a - c'*l_b - c_b| <= c'*epsilon
    expresses for any c' larger than both counters.
    """
    return not (hlc_less(a.shifted(epsilon), b) or hlc_less(b.shifted(epsilon), a))


def counter_base(stamps: Iterable[HlcTimestamp], floor: int = MIN_COUNTER_BASE) -> int:
    """c' = max(floor, c_max + 1) for the given timestamps"""
    c_max = max((s.c for s in stamps), default=0)
    return max(floor, c_max + 1)
