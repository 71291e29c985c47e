import pytest

from app.check.explorer import Explorer, SmallConfig, World, explore
from app.check.oracles import ViolationKind
from app.consensus.mutations import Mutation
from app.consensus.types import AppendEntriesResp, NodeState, RaftVoteResp, Role
from app.core.config import ConfigError, build
from app.sim.trace import EventKind, Trace
from conftest import entries, leader


def kinds(result):
    return {violation.kind for violation in result.violations}


def test_initial_moves_are_timeouts():
    explorer = Explorer(SmallConfig(n=3, max_crashes=0))
    assert explorer.moves(explorer.initial()) == [("timeout", 0), ("timeout", 1), ("timeout", 2)]


def test_candidates_restrict_timeouts():
    explorer = Explorer(SmallConfig(n=3, max_crashes=0, candidates=[1]))
    assert explorer.moves(explorer.initial()) == [("timeout", 1)]


def test_crash_moves_follow_the_crash_budget():
    explorer = Explorer(SmallConfig(n=3, max_crashes=1, candidates=[0]))
    assert explorer.moves(explorer.initial()) == [("timeout", 0), ("crash", 0), ("crash", 1), ("crash", 2)]


def follower(server_id, term, log, commit_index):
    return NodeState(
        server_id=server_id, current_term=term, log=log, commit_index=commit_index, last_applied=commit_index
    )


def quiet_world(match, follower_commit=1, links=None):
    log = entries(("A", 1))
    nodes = (
        leader(0, 1, log, match=match, commit_index=1),
        follower(1, 1, log, follower_commit),
        follower(2, 1, log, follower_commit),
    )
    return World(nodes=nodes, links=links or ((),) * 9)


def test_tick_only_when_a_peer_is_behind():
    explorer = Explorer(SmallConfig(n=3, max_crashes=0, candidates=[]))
    assert ("tick", 0) not in explorer.moves(quiet_world({1: 1, 2: 1}))
    assert ("tick", 0) in explorer.moves(quiet_world({1: 1, 2: 0}))
    assert ("tick", 0) in explorer.moves(quiet_world({1: 1, 2: 1}, follower_commit=0))


def test_no_tick_while_messages_are_in_flight():
    explorer = Explorer(SmallConfig(n=3, max_crashes=0, candidates=[]))
    links = [()] * 9
    links[2 * 3 + 0] = (AppendEntriesResp(1, True, 0),)
    moves = explorer.moves(quiet_world({1: 1, 2: 0}, links=tuple(links)))
    assert ("tick", 0) not in moves
    assert ("deliver", 2, 0) in moves


@pytest.mark.parametrize(
    "node, response",
    [
        (follower(0, 2, (), 0), AppendEntriesResp(1, True, 1)),
        (follower(0, 1, (), 0), AppendEntriesResp(1, False, 0)),
        (leader(0, 1, ()), RaftVoteResp(1, True)),
        (NodeState(server_id=0, current_term=1, role=Role.CANDIDATE), RaftVoteResp(1, False)),
    ],
)
def test_ignored_responses_are_consumed(node, response):
    explorer = Explorer(SmallConfig(n=3, max_crashes=0))
    links = [()] * 9
    links[1 * 3 + 0] = (response,)
    world = World(nodes=(node, follower(1, 1, (), 0), follower(2, 0, (), 0)), links=tuple(links))
    world, failure = explorer.apply(world, ("timeout", 2))
    assert failure is None
    assert world.links[1 * 3 + 0] == ()
    assert world.links[2 * 3 + 0]


def test_newer_responses_stay_queued():
    explorer = Explorer(SmallConfig(n=3, max_crashes=0))
    links = [()] * 9
    links[1 * 3 + 0] = (RaftVoteResp(3, False),)
    world = World(nodes=(follower(0, 1, (), 0), follower(1, 3, (), 0), follower(2, 0, (), 0)), links=tuple(links))
    world, _ = explorer.apply(world, ("timeout", 2))
    assert world.links[1 * 3 + 0] == (RaftVoteResp(3, False),)


def test_apply_election_round():
    """A timeout queues vote requests; delivering one reply elects the candidate."""
    explorer = Explorer(SmallConfig(n=3, max_crashes=0))
    world, failure = explorer.apply(explorer.initial(), ("timeout", 0))
    assert failure is None
    assert world.nodes[0].role is Role.CANDIDATE
    assert ("deliver", 0, 1) in explorer.moves(world)
    world, _ = explorer.apply(world, ("deliver", 0, 1))
    world, _ = explorer.apply(world, ("deliver", 1, 0))
    assert world.nodes[0].role is Role.LEADER
    assert (1, 0) in world.leaders
    assert ("client", 0) in explorer.moves(world)


def test_crash_clears_incoming_links():
    explorer = Explorer(SmallConfig(n=3))
    world, _ = explorer.apply(explorer.initial(), ("timeout", 0))
    world, _ = explorer.apply(world, ("crash", 1))
    assert world.links[0 * 3 + 1] == ()
    assert world.crashes == 1
    assert ("restart", 1) in explorer.moves(world)
    assert not any(move[0] == "crash" for move in explorer.moves(world))


@pytest.mark.parametrize(
    "cfg",
    [
        {"algorithm": "raft", "n": 3, "ops": 1, "max_term": 1, "max_crashes": 0},
        {"algorithm": "raft", "n": 2, "ops": 1, "max_term": 2, "max_crashes": 1},
        {"algorithm": "paxos", "n": 3, "ops": 1, "max_term": 2, "max_crashes": 0},
        {"algorithm": "paxos", "n": 2, "ops": 1, "max_term": 3, "max_crashes": 1},
    ],
)
def test_unmutated_algorithms_are_safe(cfg):
    result = explore(SmallConfig(**cfg))
    assert result.status == "ok"
    assert result.violations == []
    assert result.visited > 1


def test_raft_without_voted_for_elects_two_leaders():
    result = explore(SmallConfig(algorithm="raft", n=3, ops=0, max_term=1, mutations=[Mutation.RAFT_NO_VOTED_FOR]))
    assert result.status == "counterexample"
    assert ViolationKind.ELECTION_SAFETY in kinds(result)


def test_raft_without_up_to_date_check_loses_committed_entry():
    cfg = SmallConfig(
        algorithm="raft", n=3, ops=1, max_term=2, max_crashes=0, mutations=[Mutation.RAFT_NO_UP_TO_DATE_CHECK]
    )
    result = explore(cfg)
    assert result.status == "counterexample"
    assert kinds(result) & {ViolationKind.LEADER_COMPLETENESS, ViolationKind.STATE_MACHINE_SAFETY}


def test_raft_without_commit_term_guard():
    cfg = SmallConfig(
        algorithm="raft",
        n=3,
        ops=2,
        max_term=4,
        max_crashes=0,
        candidates=[0, 1],
        mutations=[Mutation.RAFT_NO_COMMIT_TERM_GUARD],
    )
    result = explore(cfg)
    assert result.status == "counterexample"
    assert kinds(result) & {ViolationKind.LEADER_COMPLETENESS, ViolationKind.STATE_MACHINE_SAFETY}


def test_paxos_without_term_rewrite():
    cfg = SmallConfig(
        algorithm="paxos", n=3, ops=2, max_term=4, max_crashes=0, mutations=[Mutation.PAXOS_NO_TERM_REWRITE]
    )
    result = explore(cfg)
    assert result.status == "counterexample"
    assert result.violations


def test_paxos_pick_first_with_two_candidates():
    cfg = SmallConfig(
        algorithm="paxos",
        n=3,
        ops=2,
        max_term=4,
        max_crashes=0,
        candidates=[1, 2],
        mutations=[Mutation.PAXOS_PICK_FIRST_NOT_GREATEST],
    )
    result = explore(cfg)
    assert result.status == "counterexample"
    assert kinds(result) & {ViolationKind.LEADER_COMPLETENESS, ViolationKind.STATE_MACHINE_SAFETY}


def test_counterexample_is_shortest():
    """Nothing is found when the depth bound is one move short of the counterexample."""
    cfg = {"algorithm": "raft", "n": 3, "ops": 0, "max_term": 1, "mutations": [Mutation.RAFT_NO_VOTED_FOR]}
    found = explore(SmallConfig(**cfg))
    assert found.status == "counterexample"
    assert found.trace[-1].time == found.max_depth
    shorter = explore(SmallConfig(**cfg, depth=found.max_depth - 1))
    assert shorter.status == "inconclusive"
    assert shorter.violations == []


@pytest.mark.slow
@pytest.mark.parametrize("algorithm", ["paxos", "raft"])
def test_full_bounds_with_one_crash_are_safe(algorithm):
    cfg = SmallConfig(algorithm=algorithm, n=3, ops=2, max_term=4, max_crashes=1)
    first = explore(cfg)
    assert first.status == "ok"
    assert first.truncated is False
    assert explore(cfg).visited == first.visited


@pytest.mark.slow
@pytest.mark.parametrize("mutation", list(Mutation))
def test_every_mutation_is_caught_at_full_bounds(mutation):
    cfg = SmallConfig(algorithm=mutation.algorithm, n=3, ops=2, max_term=4, max_crashes=1, mutations=[mutation])
    result = explore(cfg)
    assert result.status == "counterexample"
    assert result.violations


def test_counterexample_trace_is_a_normal_trace(tmp_path):
    result = explore(SmallConfig(algorithm="raft", n=3, ops=0, max_term=1, mutations=[Mutation.RAFT_NO_VOTED_FOR]))
    path = tmp_path / "counterexample.jsonl"
    result.trace.write(path)
    trace = Trace.load(path)
    assert trace.algorithm == "raft"
    assert trace[0].payload["mutations"] == ["raft-no-voted-for"]
    leaders = [e for e in trace.of_kind(EventKind.ROLE_CHANGE) if e.payload["role"] == "leader"]
    assert len({e.payload["server"] for e in leaders}) >= 2
    for violation in result.violations:
        assert all(0 <= seq < len(trace) for seq in violation.witnesses)


def test_depth_bound_is_inconclusive():
    result = explore(SmallConfig(n=3, ops=1, max_term=1, depth=1))
    assert result.status == "inconclusive"
    assert result.truncated is True
    assert result.capped is False


def test_state_cap_is_inconclusive():
    result = explore(SmallConfig(n=3, ops=1, max_term=1, max_states=5))
    assert result.status == "inconclusive"
    assert result.capped is True
    assert result.visited == 5


def test_exploration_is_deterministic():
    cfg = SmallConfig(algorithm="paxos", n=3, ops=1, max_term=2, max_crashes=0)
    assert explore(cfg).summary() == explore(cfg).summary()


def test_compact_keys_visit_the_same_states():
    cfg = {"algorithm": "raft", "n": 2, "ops": 1, "max_term": 2, "max_crashes": 1}
    full = explore(SmallConfig(**cfg))
    compact = explore(SmallConfig(**cfg, compact=True))
    assert compact.visited == full.visited


@pytest.mark.parametrize(
    "data",
    [
        {"n": 4},
        {"ops": 3},
        {"max_term": 5},
        {"algorithm": "paxos", "mutations": ["raft-no-voted-for"]},
        {"n": 2, "candidates": [2]},
        {"unknown": 1},
    ],
)
def test_small_config_bounds(data):
    with pytest.raises(ConfigError):
        build(SmallConfig, data)
