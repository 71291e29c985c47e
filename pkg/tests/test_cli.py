import math

import pytest

from app.cli import EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_OK, EXIT_VIOLATIONS, aggregate, format_comparison, main
from app.sim.measure import RunMetrics
from app.sim.trace import Trace


SMALL = """
algorithm: {algorithm}
n: 3
seed: 4
duration: 1200
delay:
  uniform: [2, 8]
faults:
  - {{at: 700, kind: crash_leader}}
  - {{at: 1000, kind: restart_all}}
workload:
  generator: {{start: 300, interval: 80, count: 5}}
"""


def scenario_file(tmp_path, algorithm="raft"):
    path = tmp_path / f"{algorithm}.yaml"
    path.write_text(SMALL.format(algorithm=algorithm), encoding="utf-8")
    return str(path)


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", scenario_file(tmp_path), "--out", str(out)]) == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"trace.jsonl", "metrics.tsv", "metrics.prom"}
    trace = Trace.load(out / "trace.jsonl")
    assert trace.algorithm == "raft"
    assert "violations: 0" in capsys.readouterr().out


def test_run_overrides_seed_and_duration(tmp_path):
    out = tmp_path / "out"
    main(["run", scenario_file(tmp_path), "--out", str(out), "--seed", "11", "--duration", "1100"])
    start = Trace.load(out / "trace.jsonl")[0]
    assert start.payload["seed"] == 11


def test_run_comparison_file_splits_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["run", scenario_file(tmp_path, "both"), "--out", str(out)]) == EXIT_OK
    assert (out / "paxos" / "trace.jsonl").exists()
    assert (out / "raft" / "metrics.tsv").exists()


def test_run_single_algorithm_of_comparison(tmp_path):
    out = tmp_path / "out"
    assert main(["run", scenario_file(tmp_path, "both"), "--algorithm", "paxos", "--out", str(out)]) == EXIT_OK
    assert Trace.load(out / "trace.jsonl").algorithm == "paxos"


def test_run_malformed_scenario(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("algorithm: raft\nnodes: 3\n", encoding="utf-8")
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_run_mutation_for_other_algorithm(tmp_path):
    args = ["run", scenario_file(tmp_path, "paxos"), "--mutation", "raft-no-voted-for", "--out", str(tmp_path)]
    assert main(args) == EXIT_CONFIG


def test_bad_arguments_exit_with_config_status():
    with pytest.raises(SystemExit) as excinfo:
        main(["explore", "--n", "three"])
    assert excinfo.value.code == EXIT_CONFIG


def test_explore_ok(capsys):
    args = ["explore", "--algorithm", "raft", "--ops", "1", "--max-term", "1", "--max-crashes", "0"]
    assert main(args) == EXIT_OK
    assert "status: ok" in capsys.readouterr().out


def test_explore_depth_bound_is_inconclusive():
    assert main(["explore", "--ops", "1", "--max-term", "1", "--depth", "1"]) == EXIT_INCONCLUSIVE


def test_explore_bounds_out_of_range():
    assert main(["explore", "--n", "5"]) == EXIT_CONFIG


def test_explore_mutation_writes_counterexample(tmp_path, capsys):
    out = tmp_path / "ce"
    args = ["explore", "--ops", "0", "--max-term", "1", "--mutation", "raft-no-voted-for", "--out", str(out)]
    assert main(args) == EXIT_VIOLATIONS
    trace = Trace.load(out / "counterexample.jsonl")
    assert trace[0].payload["mutations"] == ["raft-no-voted-for"]
    assert (out / "violations.jsonl").read_text(encoding="utf-8").strip()
    assert "ElectionSafety" in capsys.readouterr().out


def test_bench_writes_tables(tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", scenario_file(tmp_path, "both"), "--reps", "2", "--out", str(out)]) == EXIT_OK
    table = (out / "comparison.tsv").read_text(encoding="utf-8").splitlines()
    assert table[0] == "metric\tpaxos\traft"
    assert "runs\t2\t2" in table
    runs = (out / "runs.tsv").read_text(encoding="utf-8").splitlines()
    assert len(runs) == 5
    assert [line.split("\t")[:2] for line in runs[1:3]] == [["paxos", "4"], ["raft", "4"]]
    assert capsys.readouterr().out.startswith("metric\t")


def test_bench_needs_comparison_file(tmp_path):
    assert main(["bench", scenario_file(tmp_path, "raft"), "--reps", "1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bench_needs_positive_reps(tmp_path):
    assert main(["bench", scenario_file(tmp_path, "both"), "--reps", "0", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bench_rejects_seeds_past_the_seed_range(tmp_path):
    path = tmp_path / "last-seed.yaml"
    path.write_text(SMALL.format(algorithm="both").replace("seed: 4", f"seed: {2**64 - 1}"), encoding="utf-8")
    out = tmp_path / "bench"
    assert main(["bench", str(path), "--reps", "2", "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_aggregate_pools_latencies():
    runs = [
        ("paxos", 1, RunMetrics(election_latencies=[100, 200], candidate_terms=2, split_vote_elections=1), 0),
        ("paxos", 2, RunMetrics(election_latencies=[300]), 0),
        ("raft", 1, RunMetrics(election_latencies=[50]), 1),
    ]
    paxos = aggregate(runs, "paxos")
    assert paxos["runs"] == 2
    assert paxos["election_latency_mean"] == 200.0
    assert paxos["election_latency_variance"] == 10000.0
    assert paxos["split_vote_rate"] == 0.5
    raft = aggregate(runs, "raft")
    assert math.isnan(raft["election_latency_variance"])
    assert raft["violations"] == 1


def test_format_comparison():
    table = format_comparison({"paxos": {"runs": 2, "mean": 1.5}, "raft": {"runs": 2, "mean": 2.0}})
    assert table == "metric\tpaxos\traft\nruns\t2\t2\nmean\t1.5000\t2.0000\n"
