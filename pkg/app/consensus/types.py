"""
Domain types shared by both consensus algorithms.

Everything here is an immutable value: handlers take a NodeState and an Input
and return a new NodeState plus a list of Effects, so states can be hashed,
compared and handed between threads freely.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, ClassVar, Dict, FrozenSet, List, Optional, Tuple, Union

ServerId = int
Term = int
LogIndex = int
Operation = str


class Role(str, Enum):
    """Server role, see the state transition rules in the replication module."""

    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


class TimerKind(str, Enum):
    ELECTION = "election"
    HEARTBEAT = "heartbeat"


@dataclass(frozen=True)
class LogEntry:
    """An operation together with the term it was stored under."""

    operation: Operation
    term: Term

    def to_payload(self) -> List[Any]:
        return [self.operation, self.term]


Log = Tuple[LogEntry, ...]


def term_at(log: Log, index: LogIndex) -> Term:
    """Term of the entry at a 1-based index; index 0 is the empty-prefix sentinel."""
    if index == 0:
        return 0
    return log[index - 1].term


def last_log_info(log: Log) -> Tuple[LogIndex, Term]:
    """Return (last index, last term), or (0, 0) for the empty log."""
    if not log:
        return 0, 0
    return len(log), log[-1].term


def entries_after(log: Log, index: LogIndex) -> Tuple[Tuple[LogIndex, LogEntry], ...]:
    """(index, entry) pairs for every entry strictly after ``index``."""
    return tuple((i, entry) for i, entry in enumerate(log[index:], start=index + 1))


def log_payload(log: Log) -> List[List[Any]]:
    return [entry.to_payload() for entry in log]


# Messages


@dataclass(frozen=True)
class AppendEntriesReq:
    kind: ClassVar[str] = "append_entries"

    term: Term
    leader_id: ServerId
    prev_log_index: LogIndex
    prev_log_term: Term
    entries: Log
    leader_commit: LogIndex

    def to_payload(self) -> Dict[str, Any]:
        return {
            "type": self.kind,
            "term": self.term,
            "leader_id": self.leader_id,
            "prev_log_index": self.prev_log_index,
            "prev_log_term": self.prev_log_term,
            "entries": log_payload(self.entries),
            "leader_commit": self.leader_commit,
        }


@dataclass(frozen=True)
class AppendEntriesResp:
    kind: ClassVar[str] = "append_entries_response"

    term: Term
    success: bool
    last_appended: LogIndex

    def to_payload(self) -> Dict[str, Any]:
        return {
            "type": self.kind,
            "term": self.term,
            "success": self.success,
            "last_appended": self.last_appended,
        }


@dataclass(frozen=True)
class PaxosVoteReq:
    kind: ClassVar[str] = "paxos_request_vote"

    term: Term
    leader_commit: LogIndex

    def to_payload(self) -> Dict[str, Any]:
        return {"type": self.kind, "term": self.term, "leader_commit": self.leader_commit}


@dataclass(frozen=True)
class PaxosVoteResp:
    kind: ClassVar[str] = "paxos_request_vote_response"

    term: Term
    vote_granted: bool
    entries: Tuple[Tuple[LogIndex, LogEntry], ...] = ()

    def to_payload(self) -> Dict[str, Any]:
        return {
            "type": self.kind,
            "term": self.term,
            "vote_granted": self.vote_granted,
            "entries": [[index, entry.to_payload()] for index, entry in self.entries],
        }


@dataclass(frozen=True)
class RaftVoteReq:
    kind: ClassVar[str] = "raft_request_vote"

    term: Term
    candidate_id: ServerId
    last_log_index: LogIndex
    last_log_term: Term

    def to_payload(self) -> Dict[str, Any]:
        return {
            "type": self.kind,
            "term": self.term,
            "candidate_id": self.candidate_id,
            "last_log_index": self.last_log_index,
            "last_log_term": self.last_log_term,
        }


@dataclass(frozen=True)
class RaftVoteResp:
    kind: ClassVar[str] = "raft_request_vote_response"

    term: Term
    vote_granted: bool

    def to_payload(self) -> Dict[str, Any]:
        return {"type": self.kind, "term": self.term, "vote_granted": self.vote_granted}


Message = Union[
    AppendEntriesReq, AppendEntriesResp, PaxosVoteReq, PaxosVoteResp, RaftVoteReq, RaftVoteResp
]

RESPONSE_TYPES = (AppendEntriesResp, PaxosVoteResp, RaftVoteResp)


# Per-role state


@dataclass(frozen=True)
class PaxosCandidateState:
    """Votes and log entries collected during one Paxos election."""

    votes: FrozenSet[ServerId]
    # arrival order, own entries first; (index, entry) pairs are unique
    entries_seen: Tuple[Tuple[LogIndex, LogEntry], ...]
    commit_snapshot: LogIndex


@dataclass(frozen=True)
class RaftCandidateState:
    votes: FrozenSet[ServerId]


CandidateState = Union[PaxosCandidateState, RaftCandidateState]


@dataclass(frozen=True)
class LeaderState:
    """Replication progress, one slot per server id."""

    next_index: Tuple[LogIndex, ...]
    match_index: Tuple[LogIndex, ...]

    @classmethod
    def start(cls, n: int, leader_id: ServerId, next_index: LogIndex, log_length: LogIndex) -> "LeaderState":
        match = tuple(log_length if peer == leader_id else 0 for peer in range(n))
        return cls(next_index=(next_index,) * n, match_index=match)

    def with_peer(self, peer: ServerId, next_index: LogIndex, match_index: LogIndex) -> "LeaderState":
        nxt = list(self.next_index)
        match = list(self.match_index)
        nxt[peer] = next_index
        match[peer] = match_index
        return LeaderState(next_index=tuple(nxt), match_index=tuple(match))


@dataclass(frozen=True)
class PersistentState:
    """The part of a server's state that survives a crash."""

    server_id: ServerId
    current_term: Term = 0
    voted_for: Optional[ServerId] = None
    log: Log = ()

    def to_payload(self) -> Dict[str, Any]:
        return {
            "server": self.server_id,
            "term": self.current_term,
            "voted_for": self.voted_for,
            "log": log_payload(self.log),
        }


@dataclass(frozen=True)
class NodeState:
    server_id: ServerId
    current_term: Term = 0
    voted_for: Optional[ServerId] = None
    log: Log = ()
    commit_index: LogIndex = 0
    last_applied: LogIndex = 0
    role: Role = Role.FOLLOWER
    candidate: Optional[CandidateState] = None
    leader: Optional[LeaderState] = None

    def persistent(self) -> PersistentState:
        return PersistentState(
            server_id=self.server_id,
            current_term=self.current_term,
            voted_for=self.voted_for,
            log=self.log,
        )

    @classmethod
    def recover(cls, persisted: PersistentState) -> "NodeState":
        """Rebuild a server after a crash: persistent fields reloaded, volatile ones reset."""
        return cls(
            server_id=persisted.server_id,
            current_term=persisted.current_term,
            voted_for=persisted.voted_for,
            log=persisted.log,
        )

    def as_follower(self) -> "NodeState":
        return replace(self, role=Role.FOLLOWER, candidate=None, leader=None)


# Inputs


@dataclass(frozen=True)
class Deliver:
    sender: ServerId
    message: Message


@dataclass(frozen=True)
class TimerFire:
    timer: TimerKind


@dataclass(frozen=True)
class ClientRequest:
    operation: Operation


@dataclass(frozen=True)
class Restart:
    pass


Input = Union[Deliver, TimerFire, ClientRequest, Restart]


# Effects


@dataclass(frozen=True)
class Send:
    to: ServerId
    message: Message


@dataclass(frozen=True)
class Broadcast:
    message: Message


@dataclass(frozen=True)
class Persist:
    pass


@dataclass(frozen=True)
class Apply:
    index: LogIndex
    operation: Operation
    term: Term


@dataclass(frozen=True)
class RoleChange:
    role: Role
    term: Term


@dataclass(frozen=True)
class ResetTimer:
    timer: TimerKind


Effect = Union[Send, Broadcast, Persist, Apply, RoleChange, ResetTimer]

Step = Tuple[NodeState, List[Effect]]


class InternalFault(Exception):
    """An algorithm invariant was broken; the run is aborted and reported."""

    def __init__(self, message: str, server_id: Optional[ServerId] = None):
        super().__init__(message)
        self.server_id = server_id


class NotLeader(Exception):
    """A client operation was offered to a server that is not the leader."""

    def __init__(self, server_id: ServerId, operation: Operation):
        super().__init__(f"Server {server_id} is not the leader, rejected {operation!r}")
        self.server_id = server_id
        self.operation = operation
