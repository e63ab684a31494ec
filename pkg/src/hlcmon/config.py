"""
Scenario files and command line overrides

A scenario file is flat "key = value" text; "#" starts a comment. Keys are the command line flag
names with underscores, e.g.

    n = 4
    epsilon = 500
    workload = exclusive
    overrun_prob = 1.0
"""

import logging
from collections.abc import Callable, Mapping
from typing import Any

from hlcmon.monitor import MonitorWindowing
from hlcmon.simulator import ExclusiveAccessWorkload, ScenarioConfig, SyntheticWorkload
from hlcmon.smt_encoder import EncoderConfig
from hlcmon.trace_model import Domain

logger = logging.getLogger(__name__)


def _to_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


# key -> parser for values read from a file
KEYS: dict[str, Callable[[str], Any]] = {
    # scenario
    "n": int,
    "tick_ms": float,
    "epsilon": int,
    "delta": int,
    "delta_min": _optional_int,
    "delta_max": _optional_int,
    "mfr": float,
    "duration": int,
    "seed": int,
    "link_delay": int,
    "workload": str,
    "beta": float,
    "interval": int,
    "domain": str,
    "slot": int,
    "guard": int,
    "overrun": int,
    "overrun_prob": float,
    # encoder
    "combine": _to_bool,
    "c_prime": _optional_int,
    "solver": str,
    "timeout": float,
    # windowing
    "period": int,
    "overlap": _optional_int,
    "workers": int,
}


def load_config_file(path: str) -> dict[str, Any]:
    """Parse a scenario file into typed values"""
    values: dict[str, Any] = {}
    with open(path, encoding="utf-8") as f:
        for i, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, text = line.partition("=")
            key = key.strip()
            if not sep:
                raise ValueError(f"{path}:{i}: expected 'key = value', got {raw.strip()!r}")
            if key not in KEYS:
                raise ValueError(f"{path}:{i}: unknown key {key!r}")
            try:
                values[key] = KEYS[key](text.strip())
            except ValueError as e:
                raise ValueError(f"{path}:{i}: invalid value for {key}: {e}") from e
    logger.info(f"# Loaded {len(values)} settings from {path}")
    return values


def merge(file_values: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Command line values win over file values; None means "not given" """
    merged = dict(file_values)
    merged.update({key: value for key, value in overrides.items() if value is not None and key in KEYS})
    return merged


def scenario_from_values(values: Mapping[str, Any]) -> ScenarioConfig:
    base = ScenarioConfig()
    workload_name = values.get("workload", "synthetic")
    workload: SyntheticWorkload | ExclusiveAccessWorkload
    if workload_name == "synthetic":
        defaults = SyntheticWorkload()
        workload = SyntheticWorkload(
            beta=values.get("beta", defaults.beta),
            interval=values.get("interval", defaults.interval),
            domain=Domain(values.get("domain", defaults.domain.value)),
        )
    elif workload_name == "exclusive":
        ex = ExclusiveAccessWorkload()
        workload = ExclusiveAccessWorkload(
            slot=values.get("slot", ex.slot),
            guard=values.get("guard", ex.guard),
            overrun=values.get("overrun", ex.overrun),
            overrun_prob=values.get("overrun_prob", ex.overrun_prob),
        )
    else:
        raise ValueError(f"unknown workload {workload_name!r} (expected synthetic or exclusive)")
    config = ScenarioConfig(
        n=values.get("n", base.n),
        tick_ms=values.get("tick_ms", base.tick_ms),
        epsilon=values.get("epsilon", base.epsilon),
        delta=values.get("delta", base.delta),
        delta_min=values.get("delta_min", base.delta_min),
        delta_max=values.get("delta_max", base.delta_max),
        mfr=values.get("mfr", base.mfr),
        duration=values.get("duration", base.duration),
        seed=values.get("seed", base.seed),
        workload=workload,
        link_delay=values.get("link_delay", base.link_delay),
    )
    config.validate()
    return config


def encoder_from_values(values: Mapping[str, Any], epsilon: int) -> EncoderConfig:
    config = EncoderConfig(
        epsilon=epsilon,
        combine=values.get("combine", False),
        c_prime=values.get("c_prime"),
        solver=values.get("solver"),
        timeout=values.get("timeout", 60.0),
    )
    config.validate()
    return config


def windowing_from_values(values: Mapping[str, Any], epsilon: int) -> MonitorWindowing:
    base = MonitorWindowing()
    windowing = MonitorWindowing(
        period=values.get("period", base.period),
        overlap=values.get("overlap", base.overlap),
        workers=values.get("workers", base.workers),
    )
    windowing.validate(epsilon)
    return windowing
