"""Monitoring metrics: solver capacity, detection accuracy and summaries of sweep results"""

import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np


class MinMaxScaler:
    def __init__(self, collection: dict[str, dict], key: str):
        """
        Identify min & max values from the given data

        Inputs:
            - collection: dict, e.g., sweep rows keyed by their index with "solver_seconds" in subdicts
            - key: which item in the dict should be used when extracting values (e.g., "solver_seconds")
        """
        values = sorted([d[key] for d in collection.values() if key in d and not math.isnan(d[key])])
        # do some rough outlier filtering
        if len(values) > 2:
            self._min = min(values[1:])
            self._max = max(values[:-1])
        else:
            values.append(0)  # in case the list is empty
            self._min = min(values)
            self._max = max(values)

    def scale(self, value) -> float:
        """
        Scale the given value to be between 0 and 1

        Inputs:
            - value: some number that should be between _min and _max
        Returns:
            - the given number scaled as (value - min) / (max - min)
        """
        if (self._max - self._min) == 0 or math.isnan(value):
            return 0
        return min(1, max(0, (value - self._min) / (self._max - self._min)))


@dataclass(frozen=True)
class CapacityEstimate:
    """
    Monitors needed to keep up with the system

    c is the solver time spent per simulated second. A standalone monitor pipeline needs ceil(c)
    monitor machines and detects with a latency of c seconds; running the monitor on the n
    application machines instead costs each of them the fraction (100c/n) / (100 + 100c/n) of its
    time, with a latency of n seconds.
    """

    c: float
    n: int
    standalone_monitors: int
    standalone_latency_s: float
    combined_fraction: float
    combined_latency_s: float


def capacity_estimate(solver_seconds: Iterable[float], simulated_seconds: float, n: int) -> CapacityEstimate:
    """
    Inputs:
        - solver_seconds: solver wall time of every window
        - simulated_seconds: simulated run time the windows cover
        - n: number of application processes
    """
    if simulated_seconds <= 0 or n <= 0:
        raise ValueError(f"need positive simulated time and process count, got {simulated_seconds}s and n={n}")
    c = float(np.sum(np.fromiter(solver_seconds, dtype=float))) / simulated_seconds
    share = 100 * c / n
    return CapacityEstimate(
        c=c,
        n=n,
        standalone_monitors=max(1, math.ceil(c)),
        standalone_latency_s=c,
        combined_fraction=share / (100 + share),
        combined_latency_s=float(n),
    )


@dataclass(frozen=True)
class Accuracy:
    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def precision(self) -> float:
        detected = self.true_positives + self.false_positives
        return self.true_positives / detected if detected else 1.0

    @property
    def recall(self) -> float:
        actual = self.true_positives + self.false_negatives
        return self.true_positives / actual if actual else 1.0


def accuracy(detected: Sequence[bool], actual: Sequence[bool]) -> Accuracy:
    """Compare monitor detections against ground truth (e.g., the oracle) instance by instance"""
    if len(detected) != len(actual):
        raise ValueError(f"got {len(detected)} detections for {len(actual)} instances")
    pairs = Counter(zip(detected, actual, strict=True))
    return Accuracy(pairs[True, True], pairs[True, False], pairs[False, True])


def verdict_histogram(verdicts: Iterable[str]) -> dict[str, int]:
    """{"sat": ..., "unsat": ..., "error": ...}"""
    counts = Counter(verdicts)
    return {key: counts.get(key, 0) for key in ("sat", "unsat", "error")}


def mean(values: Iterable[float]) -> float:
    arr = np.fromiter(values, dtype=float)
    return float(arr.mean()) if arr.size else math.nan


def is_monotone(values: Sequence[float], decreasing: bool = False) -> bool:
    """Whether the series never goes up (decreasing=True) or never goes down"""
    diffs = np.diff(np.asarray(values, dtype=float))
    return bool(np.all(diffs <= 0) if decreasing else np.all(diffs >= 0))
