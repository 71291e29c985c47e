import pytest

from app.sim.measure import RunMetrics, collect_metrics, measure_latencies
from app.sim.simulator import run
from app.sim.trace import EventKind


def role(tb, server, role_name, term):
    return tb.add(EventKind.ROLE_CHANGE, server=server, role=role_name, term=term, commit_index=0)


def test_split_abandoned_and_won_elections(trace_builder):
    tb = trace_builder("raft")
    role(tb, 0, "candidate", 1)
    role(tb, 1, "candidate", 1)
    role(tb, 2, "candidate", 2)
    role(tb, 1, "candidate", 3)
    tb.leader(1, 3, [])
    metrics = collect_metrics(tb.trace)
    assert metrics.elections_started == 4
    assert metrics.elections_won == 1
    assert metrics.candidate_terms == 3
    assert metrics.split_vote_elections == 1
    assert metrics.abandoned_elections == 1


def test_lone_candidate_that_never_wins_is_not_a_split_vote(trace_builder):
    tb = trace_builder("paxos")
    role(tb, 2, "candidate", 2)
    role(tb, 2, "candidate", 5)
    metrics = collect_metrics(tb.trace)
    assert metrics.split_vote_elections == 0
    assert metrics.abandoned_elections == 2
    assert metrics.candidate_terms == 2


def test_initial_election_latency(trace_builder):
    tb = trace_builder("raft")
    tb.at(240).leader(0, 1, [])
    assert measure_latencies(tb.trace) == [240]


def test_latency_after_leader_crash(trace_builder):
    tb = trace_builder("raft")
    tb.at(200).leader(0, 1, [])
    tb.at(500).add(EventKind.CRASH, server=0, was_leader=True, term=1)
    tb.at(650).leader(2, 2, [])
    assert measure_latencies(tb.trace) == [200, 150]


def test_crash_of_follower_is_not_a_failure(trace_builder):
    tb = trace_builder("raft")
    tb.at(200).leader(0, 1, [])
    tb.at(500).add(EventKind.CRASH, server=1, was_leader=False, term=1)
    tb.at(900).leader(2, 2, [])
    assert measure_latencies(tb.trace) == [200]


def test_latency_after_leader_isolated(trace_builder):
    tb = trace_builder("raft")
    tb.at(100).leader(0, 1, [])
    tb.at(400).add(EventKind.PARTITION_SET, groups=[[0], [1, 2]])
    tb.at(580).leader(1, 2, [])
    assert measure_latencies(tb.trace) == [100, 180]


def test_partition_keeping_leader_in_majority(trace_builder):
    tb = trace_builder("raft")
    tb.at(100).leader(0, 1, [])
    tb.at(400).add(EventKind.PARTITION_SET, groups=[[0, 1], [2]])
    assert measure_latencies(tb.trace) == [100]


def test_paxos_latency_after_leader_crash(trace_builder):
    tb = trace_builder("paxos")
    tb.at(100).leader(0, 3, [])
    tb.at(300).add(EventKind.CRASH, server=0, was_leader=True, term=3)
    tb.at(420).leader(1, 4, [])
    assert measure_latencies(tb.trace) == [100, 120]


def test_entry_shipping_counters(trace_builder):
    tb = trace_builder("paxos")
    tb.add(
        EventKind.SEND_MSG, src=1, dst=0, msg_id=0,
        msg={"type": "paxos_request_vote_response", "term": 4, "vote_granted": True, "entries": [[1, ["A", 3]], [2, ["B", 3]]]},
    )
    append = {"type": "append_entries", "term": 4, "leader_id": 0, "prev_log_index": 0, "prev_log_term": 0,
              "entries": [["A", 4], ["B", 4]], "leader_commit": 0}
    tb.add(EventKind.SEND_MSG, src=0, dst=1, msg_id=1, msg=append, leader_prefix="x")
    tb.add(
        EventKind.DELIVER_MSG, src=0, dst=1, msg_id=1, msg=append,
        follower_prefix="x", accepted=True, held_identical=0, held_rewritten=2,
    )
    metrics = collect_metrics(tb.trace)
    assert metrics.vote_entries_shipped == 2
    assert metrics.append_entries_shipped == 2
    assert metrics.duplicate_entry_transmissions == 2
    assert metrics.redundant_entry_transmissions == 0
    assert metrics.messages_total == 2


def test_committed_ops_counts_distinct_operations(trace_builder):
    tb = trace_builder("raft")
    tb.apply(0, 1, "A", 1, leader_term=1)
    tb.apply(1, 1, "A", 1)
    tb.apply(0, 2, "B", 1, leader_term=1)
    assert collect_metrics(tb.trace).committed_ops == 2


@pytest.mark.parametrize("algorithm", ["paxos", "raft"])
def test_quiet_run_has_one_latency_sample(make_scenario, algorithm):
    _, metrics = run(make_scenario(algorithm=algorithm, duration=1500))
    assert len(metrics.election_latencies) == 1
    if algorithm == "raft":
        assert metrics.vote_entries_shipped == 0


def test_scalars_and_tsv():
    metrics = RunMetrics(elections_won=2, election_latencies=[100, 300], committed_ops=5)
    values = metrics.scalars()
    assert values["election_latency_count"] == 2
    assert values["election_latency_mean"] == 200.0
    assert "election_latencies" not in values
    tsv = metrics.to_tsv()
    assert "committed_ops\t5\n" in tsv
    assert tsv.endswith("election_latencies\t100,300\n")
