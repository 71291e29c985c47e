"""
Safety oracles over traces.

Each checker reads a finished Trace and returns a list of Violations. The
witnesses of a Violation are the seq numbers of the events that together
break the property, so every report can be looked up in the trace file.
"""

from collections import defaultdict
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Set, Tuple

from pydantic import BaseModel, Field

from app.core.observability import get_logger
from app.sim.trace import EventKind, Trace, TraceEvent

logger = get_logger(__name__)

Entry = Tuple[str, int]


class ViolationKind(str, Enum):
    STATE_MACHINE_SAFETY = "StateMachineSafety"
    LEADER_COMPLETENESS = "LeaderCompleteness"
    ELECTION_SAFETY = "ElectionSafety"
    LOG_MATCHING = "LogMatching"
    COMMITTED_OVERWRITE = "CommittedOverwrite"
    VOTE_PER_TERM = "VotePerTerm"
    TERM_PURITY = "TermPurity"
    TERM_MONOTONICITY = "TermMonotonicity"
    CRASH_RECOVERY = "CrashRecovery"
    INTERNAL_FAULT = "InternalFault"


class Violation(BaseModel):
    kind: ViolationKind
    witnesses: List[int] = Field(..., description="Seq numbers of the violating events")
    description: str

    def to_json(self) -> str:
        return self.model_dump_json()


def _log(payload: Dict[str, Any]) -> List[Entry]:
    return [(op, term) for op, term in payload["log"]]


def check_state_machine_safety(trace: Trace) -> List[Violation]:
    """No two ApplyOp events at the same index carry different operations."""
    first: Dict[int, TraceEvent] = {}
    violations = []
    for event in trace.of_kind(EventKind.APPLY_OP):
        index, op = event.payload["index"], event.payload["op"]
        seen = first.setdefault(index, event)
        if seen.payload["op"] != op:
            violations.append(
                Violation(
                    kind=ViolationKind.STATE_MACHINE_SAFETY,
                    witnesses=[seen.seq, event.seq],
                    description=(
                        f"index {index}: server {seen.payload['server']} applied {seen.payload['op']!r}, "
                        f"server {event.payload['server']} applied {op!r}"
                    ),
                )
            )
    return violations


def check_leader_completeness(trace: Trace) -> List[Violation]:
    """Every leader of a later term holds every op committed by an earlier leader."""
    commits: Dict[Tuple[int, str], TraceEvent] = {}
    for event in trace.of_kind(EventKind.APPLY_OP):
        if event.payload.get("leader_term") is not None:
            commits.setdefault((event.payload["index"], event.payload["op"]), event)

    violations = []
    promotions = [e for e in trace.of_kind(EventKind.ROLE_CHANGE) if e.payload["role"] == "leader"]
    for (index, op), commit in sorted(commits.items()):
        term = commit.payload["leader_term"]
        for promotion in promotions:
            if promotion.payload["term"] <= term:
                continue
            log = promotion.payload["log"]
            if index > len(log) or log[index - 1][0] != op:
                violations.append(
                    Violation(
                        kind=ViolationKind.LEADER_COMPLETENESS,
                        witnesses=[commit.seq, promotion.seq],
                        description=(
                            f"{op!r} committed at index {index} in term {term} is missing from "
                            f"leader {promotion.payload['server']} of term {promotion.payload['term']}"
                        ),
                    )
                )
    return violations


def check_election_safety(trace: Trace, algorithm: Optional[str] = None) -> List[Violation]:
    """At most one leader per term; under Paxos, candidates only in their own residue."""
    algorithm = algorithm or trace.algorithm
    n = trace.n
    leaders: Dict[int, TraceEvent] = {}
    violations = []
    for event in trace.of_kind(EventKind.ROLE_CHANGE):
        server, term, role = event.payload["server"], event.payload["term"], event.payload["role"]
        if role == "leader":
            other = leaders.setdefault(term, event)
            if other.payload["server"] != server:
                violations.append(
                    Violation(
                        kind=ViolationKind.ELECTION_SAFETY,
                        witnesses=[other.seq, event.seq],
                        description=f"servers {other.payload['server']} and {server} both lead term {term}",
                    )
                )
        if algorithm == "paxos" and role in ("candidate", "leader") and n and term % n != server:
            violations.append(
                Violation(
                    kind=ViolationKind.ELECTION_SAFETY,
                    witnesses=[event.seq],
                    description=f"server {server} became {role} in term {term}, owned by {term % n}",
                )
            )
    return violations


def check_vote_per_term(trace: Trace) -> List[Violation]:
    """A server grants at most one candidate per term."""
    granted: Dict[Tuple[int, int], TraceEvent] = {}
    violations = []
    for event in trace.of_kind(EventKind.SEND_MSG):
        msg = event.payload["msg"]
        if not msg["type"].endswith("request_vote_response") or not msg["vote_granted"]:
            continue
        key = (event.payload["src"], msg["term"])
        first = granted.setdefault(key, event)
        if first.payload["dst"] != event.payload["dst"]:
            violations.append(
                Violation(
                    kind=ViolationKind.VOTE_PER_TERM,
                    witnesses=[first.seq, event.seq],
                    description=(
                        f"server {key[0]} voted for {first.payload['dst']} and "
                        f"{event.payload['dst']} in term {key[1]}"
                    ),
                )
            )
    return violations


def _common_prefix_violation(a: List[Entry], b: List[Entry]) -> Optional[int]:
    """Highest index where a and b agree on term but not on the prefix, if any."""
    for index in range(min(len(a), len(b)), 0, -1):
        if a[index - 1][1] == b[index - 1][1]:
            return None if a[:index] == b[:index] else index
    return None


def check_log_matching(trace: Trace, algorithm: Optional[str] = None) -> List[Violation]:
    """Raft: equal (index, term) means equal prefixes, terms never change.

    Paxos rewrites terms on promotion, so the committed overwrite check runs
    instead.
    """
    algorithm = algorithm or trace.algorithm
    if algorithm == "paxos":
        return check_committed_overwrite(trace)

    logs: Dict[int, Tuple[TraceEvent, List[Entry]]] = {}
    op_terms: Dict[str, Tuple[TraceEvent, int]] = {}
    violations = []
    for event in trace.of_kind(EventKind.PERSIST_WRITE, EventKind.RESTART):
        server, log = event.payload["server"], _log(event.payload)
        for other, (other_event, other_log) in logs.items():
            if other == server:
                continue
            index = _common_prefix_violation(log, other_log)
            if index is not None:
                violations.append(
                    Violation(
                        kind=ViolationKind.LOG_MATCHING,
                        witnesses=[other_event.seq, event.seq],
                        description=(
                            f"servers {other} and {server} share term {log[index - 1][1]} at index {index} "
                            f"but their logs differ up to it"
                        ),
                    )
                )
        for op, term in log:
            first, first_term = op_terms.setdefault(op, (event, term))
            if first_term != term:
                violations.append(
                    Violation(
                        kind=ViolationKind.LOG_MATCHING,
                        witnesses=[first.seq, event.seq],
                        description=f"{op!r} appears with terms {first_term} and {term}",
                    )
                )
        logs[server] = (event, log)
    return violations


def check_leader_append_only(trace: Trace) -> List[Violation]:
    """While a server leads, each persisted log extends the one before it."""
    leading: Dict[int, Tuple[TraceEvent, List[Entry]]] = {}
    violations = []
    for event in trace.of_kind(EventKind.ROLE_CHANGE, EventKind.PERSIST_WRITE, EventKind.CRASH):
        server = event.payload["server"]
        if event.kind is EventKind.ROLE_CHANGE:
            if event.payload["role"] == "leader":
                leading[server] = (event, _log(event.payload))
            else:
                leading.pop(server, None)
        elif event.kind is EventKind.CRASH:
            leading.pop(server, None)
        elif server in leading:
            before_event, before = leading[server]
            if event.payload["term"] != before_event.payload["term"]:
                # stepped down; the RoleChange follows the persist
                leading.pop(server)
                continue
            log = _log(event.payload)
            if log[: len(before)] != before:
                violations.append(
                    Violation(
                        kind=ViolationKind.LOG_MATCHING,
                        witnesses=[before_event.seq, event.seq],
                        description=f"leader {server} rewrote its own log",
                    )
                )
            leading[server] = (event, log)
    return violations


def check_committed_overwrite(trace: Trace) -> List[Violation]:
    """A committed index may be rewritten only with the same operation."""
    committed: Dict[int, TraceEvent] = {}
    logs: Dict[int, List[Entry]] = {}
    violations = []
    for event in trace.of_kind(EventKind.APPLY_OP, EventKind.PERSIST_WRITE):
        if event.kind is EventKind.APPLY_OP:
            committed.setdefault(event.payload["index"], event)
            continue
        server, log = event.payload["server"], _log(event.payload)
        for index, commit in committed.items():
            op = commit.payload["op"]
            held_before = len(logs.get(server, [])) >= index and logs[server][index - 1][0] == op
            if held_before and (index > len(log) or log[index - 1][0] != op):
                violations.append(
                    Violation(
                        kind=ViolationKind.COMMITTED_OVERWRITE,
                        witnesses=[commit.seq, event.seq],
                        description=f"server {server} replaced committed {op!r} at index {index}",
                    )
                )
        logs[server] = log
    return violations


def check_term_purity(trace: Trace) -> List[Violation]:
    """A new Paxos leader holds only current-term entries above its commit index."""
    violations = []
    for event in trace.of_kind(EventKind.ROLE_CHANGE):
        payload = event.payload
        if payload["role"] != "leader":
            continue
        stale = [
            index
            for index, (_, term) in enumerate(payload["log"], start=1)
            if index > payload["commit_index"] and term != payload["term"]
        ]
        if stale:
            violations.append(
                Violation(
                    kind=ViolationKind.TERM_PURITY,
                    witnesses=[event.seq],
                    description=f"leader {payload['server']} of term {payload['term']} has old-term entries at {stale}",
                )
            )
    return violations


def check_prefix_match(trace: Trace) -> List[Violation]:
    """An accepted AppendEntries means the follower's prefix equalled the leader's at send time."""
    sent: Dict[int, TraceEvent] = {}
    violations = []
    for event in trace.of_kind(EventKind.SEND_MSG, EventKind.DELIVER_MSG):
        if event.payload["msg"]["type"] != "append_entries":
            continue
        if event.kind is EventKind.SEND_MSG:
            sent[event.payload["msg_id"]] = event
            continue
        if not event.payload.get("accepted"):
            continue
        send = sent.get(event.payload["msg_id"])
        if send is not None and send.payload["leader_prefix"] != event.payload["follower_prefix"]:
            violations.append(
                Violation(
                    kind=ViolationKind.LOG_MATCHING,
                    witnesses=[send.seq, event.seq],
                    description=(
                        f"server {event.payload['dst']} accepted entries after index "
                        f"{event.payload['msg']['prev_log_index']} with a prefix unlike the leader's"
                    ),
                )
            )
    return violations


def check_term_monotonicity(trace: Trace) -> List[Violation]:
    """Per server, the term seen in role changes, persists and restarts never drops."""
    last: Dict[int, TraceEvent] = {}
    violations = []
    for event in trace.of_kind(EventKind.ROLE_CHANGE, EventKind.PERSIST_WRITE, EventKind.RESTART):
        server, term = event.payload["server"], event.payload["term"]
        before = last.get(server)
        if before is not None and term < before.payload["term"]:
            violations.append(
                Violation(
                    kind=ViolationKind.TERM_MONOTONICITY,
                    witnesses=[before.seq, event.seq],
                    description=f"server {server} went from term {before.payload['term']} to {term}",
                )
            )
        last[server] = event
    return violations


def check_crash_recovery(trace: Trace) -> List[Violation]:
    """Restarts reload the last persisted state and re-apply from index 1."""
    persisted: Dict[int, TraceEvent] = {}
    next_apply: Dict[int, int] = defaultdict(lambda: 1)
    violations = []
    fields = ("term", "voted_for", "log")
    for event in trace.of_kind(EventKind.PERSIST_WRITE, EventKind.RESTART, EventKind.APPLY_OP):
        server = event.payload["server"]
        if event.kind is EventKind.PERSIST_WRITE:
            persisted[server] = event
        elif event.kind is EventKind.RESTART:
            last = persisted.get(server)
            expected = {f: last.payload[f] for f in fields} if last else {"term": 0, "voted_for": None, "log": []}
            actual = {f: event.payload[f] for f in fields}
            if actual != expected:
                violations.append(
                    Violation(
                        kind=ViolationKind.CRASH_RECOVERY,
                        witnesses=[last.seq, event.seq] if last else [event.seq],
                        description=f"server {server} restarted with {actual}, last persisted {expected}",
                    )
                )
            next_apply[server] = 1
        else:
            index = event.payload["index"]
            if index != next_apply[server]:
                violations.append(
                    Violation(
                        kind=ViolationKind.CRASH_RECOVERY,
                        witnesses=[event.seq],
                        description=f"server {server} applied index {index}, expected {next_apply[server]}",
                    )
                )
            next_apply[server] = index + 1
    return violations


def check_internal_faults(trace: Trace) -> List[Violation]:
    return [
        Violation(
            kind=ViolationKind.INTERNAL_FAULT,
            witnesses=[event.seq],
            description=f"server {event.payload['server']}: {event.payload['error']}",
        )
        for event in trace.of_kind(EventKind.INTERNAL_FAULT)
    ]


Checker = Callable[[Trace], List[Violation]]


def checkers_for(algorithm: str) -> List[Checker]:
    common: List[Checker] = [
        check_internal_faults,
        check_state_machine_safety,
        check_leader_completeness,
        lambda trace: check_election_safety(trace, algorithm),
        check_vote_per_term,
        lambda trace: check_log_matching(trace, algorithm),
        check_leader_append_only,
        check_prefix_match,
        check_term_monotonicity,
        check_crash_recovery,
    ]
    if algorithm == "paxos":
        common.append(check_term_purity)
    return common


def check_all(trace: Trace, algorithm: Optional[str] = None) -> List[Violation]:
    """Run every oracle that applies to the algorithm, ordered by first witness."""
    algorithm = algorithm or trace.algorithm
    violations: List[Violation] = []
    for checker in checkers_for(algorithm):
        violations.extend(checker(trace))
    violations.sort(key=lambda v: (min(v.witnesses), v.kind.value))
    for violation in violations:
        logger.warning("check.violation", kind=violation.kind.value, witnesses=violation.witnesses)
    return violations
