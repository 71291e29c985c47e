import pytest

from app.consensus.paxos import PaxosAlgorithm
from app.consensus.raft import RaftAlgorithm
from app.consensus.types import LeaderState, LogEntry, NodeState, Role
from app.core.config import ClusterConfig, Scenario, build
from app.core.observability import configure_logging
from app.sim.trace import EventKind, Trace


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale run, skipped unless --runslow is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def entries(*pairs):
    """entries(("A", 1), ("B", 2)) -> a log tuple."""
    return tuple(LogEntry(op, term) for op, term in pairs)


def leader(server_id, term, log, n=3, next_index=None, match=None, commit_index=0):
    """A NodeState already leading ``term``."""
    next_index = len(log) + 1 if next_index is None else next_index
    state = LeaderState.start(n, server_id, next_index, len(log))
    for peer, value in (match or {}).items():
        state = state.with_peer(peer, value + 1, value)
    return NodeState(
        server_id=server_id,
        current_term=term,
        log=log,
        commit_index=commit_index,
        last_applied=commit_index,
        role=Role.LEADER,
        leader=state,
    )


@pytest.fixture
def cluster3():
    return ClusterConfig(n=3)


@pytest.fixture
def paxos3(cluster3):
    return PaxosAlgorithm(cluster3)


@pytest.fixture
def raft3(cluster3):
    return RaftAlgorithm(cluster3)


@pytest.fixture
def make_scenario():
    """Build a validated Scenario from keyword overrides."""

    def factory(**overrides):
        data = {
            "algorithm": "raft",
            "n": 3,
            "seed": 1,
            "duration": 2000,
            "delay": {"uniform": [2, 8]},
        }
        data.update(overrides)
        return build(Scenario, data)

    return factory


class TraceBuilder:
    """Hand-written traces for oracle tests."""

    def __init__(self, algorithm="raft", n=3):
        self.trace = Trace()
        self.time = 0
        self.trace.record(0, EventKind.RUN_START, algorithm=algorithm, n=n, seed=0, mutations=[])

    def at(self, time):
        """Make the next event land at ``time``."""
        self.time = time - 1
        return self

    def add(self, kind, **payload):
        self.time += 1
        return self.trace.record(self.time, kind, **payload)

    def leader(self, server, term, log, commit_index=0):
        return self.add(
            EventKind.ROLE_CHANGE,
            server=server,
            role="leader",
            term=term,
            commit_index=commit_index,
            log=[list(e) for e in log],
        )

    def apply(self, server, index, op, term, leader_term=None):
        return self.add(
            EventKind.APPLY_OP, server=server, index=index, op=op, term=term, leader_term=leader_term
        )

    def persist(self, server, term, log, voted_for=None):
        return self.add(
            EventKind.PERSIST_WRITE, server=server, term=term, voted_for=voted_for, log=[list(e) for e in log]
        )


@pytest.fixture
def trace_builder():
    return TraceBuilder


@pytest.fixture(autouse=True)
def _reset_logging():
    """Rebind the log stream after tests that captured stderr."""
    yield
    configure_logging()
