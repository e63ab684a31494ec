import csv
import json
import random
from dataclasses import replace

import pytest

from hlcmon.cli import main
from hlcmon.config import load_config_file, scenario_from_values
from hlcmon.hlc import HlcTimestamp as T
from hlcmon.metrics import is_monotone
from hlcmon.monitor import MonitorWindowing, monitor_reports, monitor_run, monitor_trace, sweep, write_sweep_csv
from hlcmon.oracle import OracleLimits, brute_force_sat, find_valid_snapshot, gen_satisfiability_instance, random_cnf
from hlcmon.reporter import MsgReport, read_reports, reports_from_trace, trace_from_reports
from hlcmon.simulator import ExclusiveAccessWorkload, ScenarioConfig, SyntheticWorkload, run
from hlcmon.smt_encoder import EncoderConfig, Sat, SolverError, Unsat, check, encode_window, solver_available
from hlcmon.trace_model import Domain, Predicate, eval_predicate, is_consistent, snapshot_values

from tests.trace_factory import predicate_for, small_traces

pytestmark = pytest.mark.skipif(not solver_available(), reason="neither a z3 executable nor the z3 bindings are installed")

OVERLAP = "tests/mock_traces/overlap.jsonl"
OVERLAP_MSG = "tests/mock_traces/overlap_msg.jsonl"
PAIRWISE = Predicate.pairwise_conflict()


def _fixture_result(path: str, epsilon: int, combine: bool):
    script = encode_window(read_reports(path), 2, 0, 100, PAIRWISE, EncoderConfig(epsilon=epsilon, combine=combine))
    return check(script)


def _exclusive_config(overrun_prob: float, seed: int = 0) -> ScenarioConfig:
    config = scenario_from_values(load_config_file("tests/mock_traces/exclusive.cfg"))
    return replace(config, seed=seed, workload=replace(config.workload, overrun_prob=overrun_prob))


def _exclusive_messages_config(seed: int) -> ScenarioConfig:
    # guard > 2 * epsilon
    workload = ExclusiveAccessWorkload(slot=30, guard=11, overrun=0, overrun_prob=0.0)
    return ScenarioConfig(n=2, epsilon=5, delta=3, mfr=0.05, duration=300, seed=seed, workload=workload)


def _rebuilt(trace):
    return trace_from_reports(reports_from_trace(trace), trace.epsilon, trace.n)


@pytest.mark.parametrize("combine", [False, True])
def test_overlapping_intervals(combine):
    result = _fixture_result(OVERLAP, 10, combine)
    assert isinstance(result, Sat)
    trace = trace_from_reports(read_reports(OVERLAP), epsilon=10)
    assert is_consistent(result.assignment, trace)
    assert snapshot_values(result.assignment, trace) == result.assignment.values == [True, True]
    assert isinstance(_fixture_result(OVERLAP, 4, combine), Unsat)


@pytest.mark.parametrize("combine", [False, True])
@pytest.mark.parametrize("epsilon", [1, 5, 10, 100])
def test_message_separates_intervals(epsilon, combine):
    assert isinstance(_fixture_result(OVERLAP_MSG, epsilon, combine), Unsat)


def test_render_deterministic():
    config = ScenarioConfig(n=3, epsilon=30, delta=10, mfr=0.05, duration=600, seed=4, workload=SyntheticWorkload(beta=0.05))
    encoder = EncoderConfig(epsilon=30)
    scripts = [encode_window(reports_from_trace(run(config)), 3, 0, 630, Predicate.at_least(2), encoder) for _ in range(2)]
    assert scripts[0].render() == scripts[1].render()
    shuffled = reports_from_trace(run(config))
    random.Random(1).shuffle(shuffled)
    assert encode_window(shuffled, 3, 0, 630, Predicate.at_least(2), encoder).render() == scripts[0].render()


def _check_against_oracle(trace, predicate):
    reports = reports_from_trace(trace)
    rebuilt = trace_from_reports(reports, trace.epsilon, trace.n)
    witness = find_valid_snapshot(rebuilt, predicate)
    verdicts = []
    for combine in (False, True):
        script = encode_window(reports, trace.n, 0, trace.horizon.l, predicate, EncoderConfig(epsilon=trace.epsilon, combine=combine))
        result = check(script)
        assert not isinstance(result, SolverError), result.message
        assert isinstance(result, Sat) == (witness is not None)
        if isinstance(result, Sat):
            assert is_consistent(result.assignment, rebuilt)
            values = snapshot_values(result.assignment, rebuilt)
            assert values == result.assignment.values
            assert eval_predicate(predicate, values)
        verdicts.append(type(result))
    assert verdicts[0] is verdicts[1]


def test_agrees_with_oracle():
    for i, trace in enumerate(small_traces(20)):
        _check_against_oracle(trace, predicate_for(trace, i))


@pytest.mark.slow
def test_agrees_with_oracle_many():
    traces = small_traces(150, start_seed=1000) + small_traces(50, start_seed=20_000, domain=Domain.INT)
    for i, trace in enumerate(traces):
        _check_against_oracle(trace, predicate_for(trace, i))


def test_satisfiability_reduction():
    for seed in range(50):
        num_vars = 1 + seed % 6
        clauses = random_cnf(num_vars, 1 + seed % 8, seed=seed)
        trace, predicate = gen_satisfiability_instance(clauses, num_vars, epsilon=20, seed=seed)
        reports = reports_from_trace(trace)
        result = check(encode_window(reports, num_vars, 0, trace.horizon.l, predicate, EncoderConfig(epsilon=20)))
        expected = brute_force_sat(clauses, num_vars)
        assert isinstance(result, Sat) == expected
        witness = find_valid_snapshot(trace, predicate, limits=OracleLimits(max_processes=6))
        assert (witness is not None) == expected


def test_exclusive_access():
    [report] = monitor_run(_exclusive_config(0.0), MonitorWindowing(period=100), PAIRWISE)
    assert report.verdict == "unsat"
    [report] = monitor_run(_exclusive_config(1.0), MonitorWindowing(period=100), PAIRWISE)
    assert report.verdict == "sat"
    assert report.latency_ticks is not None and report.latency_ticks >= 0


@pytest.mark.slow
def test_exclusive_access_many_seeds():
    for seed in range(100):
        assert all(r.verdict == "unsat" for r in monitor_run(_exclusive_config(0.0, seed), MonitorWindowing(period=100), PAIRWISE))
        trace = run(_exclusive_config(0.5, seed))
        found = find_valid_snapshot(_rebuilt(trace), PAIRWISE) is not None
        assert any(r.verdict == "sat" for r in monitor_trace(trace, PAIRWISE, windowing=MonitorWindowing(period=100))) == found


@pytest.mark.parametrize("seed", range(5))
def test_exclusive_access_with_messages(seed):
    results = monitor_run(_exclusive_messages_config(seed), MonitorWindowing(period=100), PAIRWISE)
    assert results
    assert all(r.verdict == "unsat" for r in results)


@pytest.mark.slow
def test_exclusive_access_with_messages_many_seeds():
    for seed in range(5, 100):
        trace = run(_exclusive_messages_config(seed))
        assert trace.messages
        results = monitor_trace(trace, PAIRWISE, windowing=MonitorWindowing(period=100))
        assert all(r.verdict == "unsat" for r in results), f"seed {seed}"


def test_arrival_order_does_not_change_verdicts():
    config = ScenarioConfig(n=3, epsilon=50, delta=20, mfr=0.02, duration=3000, seed=5, workload=SyntheticWorkload(beta=0.05))
    trace = run(config)
    windowing = MonitorWindowing(period=1000)
    direct = monitor_trace(trace, Predicate.at_least(2), windowing=windowing)
    delayed = monitor_trace(trace, Predicate.at_least(2), windowing=windowing, link_delay=200, seed=3)
    reports = reports_from_trace(trace)
    reports.reverse()
    reversed_order = monitor_reports(reports, 3, trace.horizon.l, Predicate.at_least(2), EncoderConfig(epsilon=50), windowing)
    verdicts = [r.verdict for r in direct]
    assert "error" not in verdicts
    assert [r.verdict for r in delayed] == verdicts == [r.verdict for r in reversed_order]
    assert all(d.verdict_tick >= r.verdict_tick for d, r in zip(delayed, direct, strict=True))


def test_window_boundary():
    windowing = MonitorWindowing(period=50)
    results = monitor_reports(read_reports(OVERLAP), 2, 100, PAIRWISE, EncoderConfig(epsilon=10), windowing)
    assert [(r.lo, r.hi) for r in results] == [(0, 50), (40, 100)]
    assert [r.verdict for r in results] == ["unsat", "sat"]


@pytest.mark.slow
def test_windows_match_oracle():
    for i, trace in enumerate(small_traces(100, start_seed=3000)):
        predicate = predicate_for(trace, i)
        found = find_valid_snapshot(_rebuilt(trace), predicate) is not None
        results = monitor_trace(trace, predicate, windowing=MonitorWindowing(period=10))
        assert any(r.verdict == "sat" for r in results) == found


def test_small_c_prime_is_replaced():
    reports = read_reports(OVERLAP) + [MsgReport(1, T(30, 2), 2, T(31, 0))]
    encoder = EncoderConfig(epsilon=10, combine=True, c_prime=2)
    [result] = monitor_reports(reports, 2, 100, PAIRWISE, encoder, MonitorWindowing(period=100))
    assert result.c_prime == 4
    assert result.verdict == "sat"


def test_sweep(tmp_path):
    base = ScenarioConfig(n=3, epsilon=50, delta=10, duration=2000, workload=SyntheticWorkload(beta=0.05))
    rows = sweep("mfr", [100, 1000], base, Predicate.at_least(2), MonitorWindowing(period=1000), seeds=(0, 1, 2))
    assert [row["value"] for row in rows] == [100, 1000]
    for row in rows:
        assert row["failed_runs"] == 0
        assert row["windows"] == 9
        assert row["error"] == 0
        assert row["sat"] > 0
        assert row["sat"] + row["unsat"] == row["windows"]
    # solver time tends to grow with the message rate, without a hard threshold
    assert isinstance(is_monotone([row["mean_solver_seconds"] for row in rows]), bool)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, str(path))
    with open(path) as f:
        recorded = {float(r["value"]): (int(r["sat"]), int(r["unsat"])) for r in csv.DictReader(f)}
    assert recorded == {row["value"]: (row["sat"], row["unsat"]) for row in rows}

    [row] = sweep("epsilon", [0.0], base, Predicate.at_least(2), MonitorWindowing(period=1000), seeds=(0,))
    assert row["failed_runs"] == row["runs"] == 1
    assert row["windows"] == 0


def test_cli_monitor(tmp_path):
    out, smt = tmp_path / "monitor.jsonl", tmp_path / "smt"
    args = ["monitor", "--reports", OVERLAP, "--epsilon", "10", "--predicate", "pairwise", "--period", "50"]
    assert main([*args, "--out", str(out), "--dump-smt", str(smt)]) == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["verdict"] for r in records] == ["unsat", "sat"]
    assert sorted(p.name for p in smt.iterdir()) == ["window_0000.smt2", "window_0001.smt2"]
    assert (smt / "window_0001.smt2").read_text().startswith("(set-logic QF_LIA)")

    assert main(["monitor", "--config", "tests/mock_traces/exclusive.cfg", "--predicate", "pairwise", "--out", str(out)]) == 0
    assert [json.loads(line)["verdict"] for line in out.read_text().splitlines()] == ["sat"]
