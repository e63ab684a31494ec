"""
Constraint encoding of the valid snapshot search and the SMT solver process that decides it

Per process P_i the script declares v_i, l_i and c_i (or v_i and nl_i = c'*l_i + c_i when combined)
describing the snapshot's timestamp and value at P_i. Clock synchronization, every reported
message and every reported variable interval become assertions; the predicate is the last one.
"""

from __future__ import annotations

import importlib.util
import logging
import os
import re
import shlex
import shutil
import subprocess
import sys
import tempfile
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from itertools import combinations

from hlcmon.hlc import HlcTimestamp, counter_base, hlc_less
from hlcmon.reporter import MsgReport, Report, VarReport
from hlcmon.trace_model import Domain, Predicate, PredicateForm, SnapshotAssignment, Value

logger = logging.getLogger(__name__)

LOGIC = "QF_LIA"


class EncodingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    """
    How windows are encoded and solved

    c_prime=None picks c' = max(4, c_max + 1) per window; solver=None runs a z3 executable from the
    PATH or, without one, the bundled runner on the z3 Python bindings.
    """

    epsilon: int
    combine: bool = False
    c_prime: int | None = None
    solver: str | None = None
    timeout: float = 60.0

    def validate(self):
        if self.epsilon <= 0:
            raise ValueError(f"Invalid encoder config: epsilon={self.epsilon} must be positive")
        if self.c_prime is not None and self.c_prime < 1:
            raise ValueError(f"Invalid encoder config: c_prime={self.c_prime} must be positive")
        if self.timeout <= 0:
            raise ValueError(f"Invalid encoder config: timeout={self.timeout} must be positive")

    @property
    def resolved_c_prime(self) -> int:
        if self.c_prime is None:
            raise EncodingError("c' has not been fixed for this window")
        return self.c_prime


@dataclass
class ConstraintScript:
    n: int
    lo: int
    hi: int
    combine: bool
    c_prime: int
    domain: Domain = Domain.BOOL
    declarations: list[str] = field(default_factory=list)
    bounds: list[str] = field(default_factory=list)
    clock_sync: list[str] = field(default_factory=list)
    communication: list[str] = field(default_factory=list)
    var_events: list[str] = field(default_factory=list)
    predicate: str = "true"

    @property
    def variables(self) -> list[str]:
        return [line.split()[1] for line in self.declarations]

    def render(self) -> str:
        lines = [f"(set-logic {LOGIC})", *self.declarations]
        sections = (self.bounds, self.clock_sync, self.communication, self.var_events, [self.predicate])
        lines += [f"(assert {a})" for section in sections for a in section]
        lines += ["(check-sat)", "(get-model)"]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Sat:
    assignment: SnapshotAssignment
    solver_seconds: float
    model: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class Unsat:
    solver_seconds: float


@dataclass(frozen=True)
class SolverError:
    message: str
    diagnostics: str = ""
    solver_seconds: float = 0.0


SolverResult = Sat | Unsat | SolverError


# term builders


def _and(terms: Sequence[str]) -> str:
    if not terms:
        return "true"
    return terms[0] if len(terms) == 1 else f"(and {' '.join(terms)})"


def _or(terms: Sequence[str]) -> str:
    if not terms:
        return "false"
    return terms[0] if len(terms) == 1 else f"(or {' '.join(terms)})"


def _sum(terms: Sequence[str]) -> str:
    if not terms:
        return "0"
    return terms[0] if len(terms) == 1 else f"(+ {' '.join(terms)})"


def _check_counter(ts: HlcTimestamp, c_prime: int):
    if ts.c >= c_prime:
        raise EncodingError(f"counter of {ts} does not fit below c'={c_prime}")


def _compare(op: str, i: int, ts: HlcTimestamp, config: EncoderConfig) -> str:
    """<l_i,c_i> op ts in HLC order, op one of >=, >, <"""
    c_prime = config.resolved_c_prime
    _check_counter(ts, c_prime)
    if config.combine:
        return f"({op} nl_{i} {ts.combined(c_prime)})"
    strict = "<" if op == "<" else ">"
    return f"(or ({strict} l_{i} {ts.l}) (and (= l_{i} {ts.l}) ({op} c_{i} {ts.c})))"


def _encode_value(value: Value) -> int:
    return int(value)


def _declarations(n: int, combine: bool) -> list[str]:
    names = ("v", "nl") if combine else ("v", "l", "c")
    return [f"(declare-const {name}_{i} Int)" for i in range(1, n + 1) for name in names]


def _bounds(n: int, lo: int, hi: int, config: EncoderConfig) -> list[str]:
    """<lo,0> <= <l_i,c_i> < <hi,0>, 0 <= c_i < c' and v_i in {0,1}"""
    c_prime = config.resolved_c_prime
    out = []
    for i in range(1, n + 1):
        out.append(f"(and (<= 0 v_{i}) (<= v_{i} 1))")
        if config.combine:
            out.append(f"(and (<= {lo * c_prime} nl_{i}) (< nl_{i} {hi * c_prime}))")
        else:
            out.append(f"(and (<= {lo} l_{i}) (< l_{i} {hi}) (<= 0 c_{i}) (< c_{i} {c_prime}))")
    return out


def encode_clock_sync(n: int, epsilon: int, config: EncoderConfig) -> list[str]:
    """
    Pairwise clock synchronization of the snapshot timestamps

    Combined: |nl_i - nl_j| <= c'*epsilon. Uncombined: |l_i - l_j| <= epsilon, and at distance
    exactly epsilon the later timestamp's counter must not exceed the earlier one's.

    This is stricter than the bare |l_i - l_j| <= epsilon at the boundary tick: a pair exactly
    epsilon apart only counts as concurrent if the counters allow it. Both forms then agree for
    every c', and they are the clock clause of happened-before on a trace rebuilt from the
    reports, where a tick is split into c' counter steps (Trace.subticks).
    """
    out = []
    for i, j in combinations(range(1, n + 1), 2):
        if config.combine:
            bound = config.resolved_c_prime * epsilon
            out.append(f"(and (<= (- nl_{i} nl_{j}) {bound}) (<= (- nl_{j} nl_{i}) {bound}))")
        else:
            out.append(
                f"(and (<= (- l_{i} l_{j}) {epsilon}) (<= (- l_{j} l_{i}) {epsilon}) "
                f"(=> (= (- l_{i} l_{j}) {epsilon}) (<= c_{i} c_{j})) "
                f"(=> (= (- l_{j} l_{i}) {epsilon}) (<= c_{j} c_{i})))"
            )
    return out


def encode_communication(msg: MsgReport, config: EncoderConfig) -> str:
    """(<l_j,c_j> >= recv) => (<l_i,c_i> > send) for a message from P_i to P_j"""
    return f"(=> {_compare('>=', msg.receiver, msg.recv_hlc, config)} {_compare('>', msg.sender, msg.send_hlc, config)})"


def encode_var_event(rep: VarReport, config: EncoderConfig) -> str:
    """(<l_i,c_i> >= start) and (<l_i,c_i> < end) => v_i = old_value"""
    guard = f"(and {_compare('>=', rep.proc, rep.start, config)} {_compare('<', rep.proc, rep.end, config)})"
    return f"(=> {guard} (= v_{rep.proc} {_encode_value(rep.old_value)}))"


def encode_predicate(p: Predicate, n: int) -> str:
    p.validate(n)
    ids = range(1, n + 1)
    if p.form is PredicateForm.CONJUNCTION:
        return _and([f"(= v_{i} 1)" for i in ids])
    if p.form in (PredicateForm.EXACTLY_K, PredicateForm.AT_LEAST_K):
        op = "=" if p.form is PredicateForm.EXACTLY_K else ">="
        return f"({op} {_sum([f'(ite (= v_{i} 1) 1 0)' for i in ids])} {p.k})"
    if p.form in (PredicateForm.SUM_EQ, PredicateForm.SUM_GEQ):
        op = "=" if p.form is PredicateForm.SUM_EQ else ">="
        return f"({op} {_sum([f'v_{i}' for i in ids])} {p.k})"
    if p.form is PredicateForm.PAIRWISE_CONFLICT:
        return _or([f"(and (= v_{i} 1) (= v_{j} 1))" for i, j in combinations(ids, 2)])
    clauses = [_or([f"(= v_{abs(lit)} {1 if lit > 0 else 0})" for lit in clause]) for clause in p.clauses]
    return _and(clauses)


def select_window(reports: Iterable[Report], lo: int, hi: int) -> list[Report]:
    """
    The reports relevant to the window [<lo,0>, <hi,0>)

    Variable intervals are clipped to the window; messages count iff they are received inside it
    (a message received before the window is satisfied by every snapshot in it, one received after
    constrains none).
    """
    start, end = HlcTimestamp(lo), HlcTimestamp(hi)
    selected: list[Report] = []
    for r in reports:
        if isinstance(r, VarReport):
            clipped_start, clipped_end = max(r.start, start), min(r.end, end)
            if hlc_less(clipped_start, clipped_end):
                selected.append(VarReport(r.proc, r.old_value, clipped_start, clipped_end))
        elif not hlc_less(r.recv_hlc, start) and hlc_less(r.recv_hlc, end):
            selected.append(r)
    return selected


def _report_stamps(reports: Iterable[Report]) -> Iterable[HlcTimestamp]:
    for r in reports:
        if isinstance(r, VarReport):
            yield from (r.start, r.end)
        else:
            yield from (r.send_hlc, r.recv_hlc)


def encode_window(
    reports: Iterable[Report], n: int, lo: int, hi: int, predicate: Predicate, config: EncoderConfig
) -> ConstraintScript:
    """
    Build the script for the window [<lo,0>, <hi,0>)

    Inputs:
        - reports: any superset of the reports relevant to the window, in any order
        - n: number of processes
        - lo, hi: window bounds (ticks of HLC l)
        - predicate: the predicate to detect
        - config: encoder settings; a c_prime of None is resolved from the window's stamps
    Returns:
        - the script; the same window and config always render to the same text
    """
    config.validate()
    if not 0 <= lo < hi:
        raise ValueError(f"Invalid window [{lo}, {hi})")
    window = select_window(reports, lo, hi)
    var_reports = sorted((r for r in window if isinstance(r, VarReport)), key=lambda r: (r.proc, r.start))
    msg_reports = sorted(
        (r for r in window if isinstance(r, MsgReport)), key=lambda r: (r.recv_hlc, r.receiver, r.send_hlc, r.sender)
    )
    if config.c_prime is None:
        config = replace(config, c_prime=counter_base(_report_stamps(window)))
    c_prime = config.resolved_c_prime

    script = ConstraintScript(n, lo, hi, config.combine, c_prime, domain=predicate.domain)
    script.declarations = _declarations(n, config.combine)
    script.bounds = _bounds(n, lo, hi, config)
    script.clock_sync = encode_clock_sync(n, config.epsilon, config)
    script.communication = [encode_communication(m, config) for m in msg_reports]
    script.var_events = [encode_var_event(r, config) for r in var_reports]
    script.predicate = encode_predicate(predicate, n)
    logger.debug(
        f"# Window [{lo}, {hi}): {len(var_reports)} variable and {len(msg_reports)} message constraints, c'={c_prime}"
    )
    return script


def solver_available() -> bool:
    return shutil.which("z3") is not None or importlib.util.find_spec("z3") is not None


def solver_command(config: EncoderConfig) -> list[str]:
    if config.solver:
        return shlex.split(config.solver)
    if shutil.which("z3"):
        return ["z3", "-smt2"]
    return [sys.executable, "-m", "hlcmon.z3_runner"]


_DEFINE_FUN = re.compile(r"\(define-fun\s+(\S+)\s+\(\)\s+Int\s+(\(\s*-\s*\d+\s*\)|-?\d+)\s*\)")


def parse_model(text: str) -> dict[str, int]:
    """(define-fun l_1 () Int 45) ... -> {"l_1": 45, ...}"""
    model = {}
    for name, raw in _DEFINE_FUN.findall(text):
        value = raw.strip("() ").replace(" ", "")
        model[name] = int(value)
    return model


def decode_model(model: dict[str, int], script: ConstraintScript) -> SnapshotAssignment:
    missing = [name for name in script.variables if name not in model]
    if missing:
        raise EncodingError(f"model lacks {', '.join(missing)}")
    stamps, values = [], []
    for i in range(1, script.n + 1):
        if script.combine:
            stamps.append(HlcTimestamp.from_combined(model[f"nl_{i}"], script.c_prime))
        else:
            stamps.append(HlcTimestamp(model[f"l_{i}"], model[f"c_{i}"]))
        v = model[f"v_{i}"]
        values.append(bool(v) if script.domain is Domain.BOOL else v)
    return SnapshotAssignment.from_lists(stamps, values)


def check(script: ConstraintScript, config: EncoderConfig | None = None) -> SolverResult:
    """
    Run the solver process on the rendered script

    Returns:
        - Sat with the decoded snapshot, Unsat, or SolverError (crash, timeout, unknown, bad model);
          solver_seconds covers the solver process only
    """
    timeout = config.timeout if config else 60.0
    command = solver_command(config or EncoderConfig(epsilon=1))
    fd, path = tempfile.mkstemp(suffix=".smt2", prefix="hlcmon_")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(script.render())
        start = time.perf_counter()
        try:
            proc = subprocess.run([*command, path], capture_output=True, text=True, timeout=timeout, check=False)
        except subprocess.TimeoutExpired as e:
            logger.warning(f"# solver timed out after {timeout}s")
            return SolverError(f"timeout after {timeout}s", str(e.stdout or ""), time.perf_counter() - start)
        except OSError as e:
            return SolverError(f"could not start {command[0]}: {e}", "", time.perf_counter() - start)
        elapsed = time.perf_counter() - start
    finally:
        os.unlink(path)

    lines = [line.strip() for line in proc.stdout.splitlines() if line.strip()]
    verdict = lines[0] if lines else ""
    diagnostics = (proc.stdout + proc.stderr).strip()
    if verdict == "unsat":
        # z3 exits with an error when asked for the model of an unsat script
        return Unsat(elapsed)
    if verdict != "sat":
        logger.warning(f"# solver gave no verdict (exit code {proc.returncode}): {verdict or proc.stderr.strip()[:200]}")
        return SolverError(f"no verdict (exit code {proc.returncode}, output {verdict!r})", diagnostics, elapsed)
    model = parse_model(proc.stdout)
    try:
        assignment = decode_model(model, script)
    except (EncodingError, ValueError) as e:
        return SolverError(f"unusable model: {e}", diagnostics, elapsed)
    return Sat(assignment, elapsed, model)
