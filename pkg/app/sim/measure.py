"""
Run metrics derived from a trace.

Everything here is computed from trace events alone, so a trace loaded from
disk measures the same as the one the simulator produced.
"""

from collections import defaultdict
from typing import Dict, List, Optional, Set, Tuple

from pydantic import BaseModel, Field

from app.sim.trace import EventKind, Trace

VOTE_RESPONSE_TYPES = ("paxos_request_vote_response", "raft_request_vote_response")


class RunMetrics(BaseModel):
    """Counters for one run.

    A term whose only candidate never won is an abandoned election, not a split
    vote: it is counted in ``abandoned_elections`` and left out of
    ``split_vote_elections``, which needs two or more candidates.
    """

    elections_started: int = Field(0, ge=0, description="RoleChange-to-candidate events")
    elections_won: int = Field(0, ge=0, description="RoleChange-to-leader events")
    candidate_terms: int = Field(0, ge=0, description="Distinct terms with at least one candidate")
    split_vote_elections: int = Field(0, ge=0, description="Terms with two or more candidates and no leader")
    abandoned_elections: int = Field(0, ge=0, description="Terms with one candidate and no leader")
    election_latencies: List[int] = Field(default_factory=list, description="Failure instant to next leader")
    vote_entries_shipped: int = Field(0, ge=0)
    append_entries_shipped: int = Field(0, ge=0)
    duplicate_entry_transmissions: int = Field(0, ge=0, description="Entries re-sent under a rewritten term")
    redundant_entry_transmissions: int = Field(0, ge=0, description="Identical entries re-sent")
    committed_ops: int = Field(0, ge=0)
    messages_total: int = Field(0, ge=0)
    messages_dropped: int = Field(0, ge=0)
    not_leader_rejects: int = Field(0, ge=0)
    crashes: int = Field(0, ge=0)

    def scalars(self) -> Dict[str, float]:
        """Numeric metrics only, plus count and mean of the latency samples."""
        values: Dict[str, float] = {
            key: value for key, value in self.model_dump().items() if key != "election_latencies"
        }
        latencies = self.election_latencies
        values["election_latency_count"] = len(latencies)
        values["election_latency_mean"] = sum(latencies) / len(latencies) if latencies else 0.0
        return values

    def to_rows(self) -> List[Tuple[str, str]]:
        rows = [(key, str(value)) for key, value in self.model_dump().items() if key != "election_latencies"]
        rows.append(("election_latencies", ",".join(str(v) for v in self.election_latencies)))
        return rows

    def to_tsv(self) -> str:
        return "".join(f"{key}\t{value}\n" for key, value in self.to_rows())


def _election_counts(trace: Trace) -> Dict[str, int]:
    candidates: Dict[int, Set[int]] = defaultdict(set)
    won: Set[int] = set()
    started = elections_won = 0
    for event in trace.of_kind(EventKind.ROLE_CHANGE):
        role, term = event.payload["role"], event.payload["term"]
        if role == "candidate":
            started += 1
            candidates[term].add(event.payload["server"])
        elif role == "leader":
            elections_won += 1
            won.add(term)
    lost = [servers for term, servers in candidates.items() if term not in won]
    return {
        "elections_started": started,
        "elections_won": elections_won,
        "candidate_terms": len(candidates),
        "split_vote_elections": sum(1 for servers in lost if len(servers) >= 2),
        "abandoned_elections": sum(1 for servers in lost if len(servers) == 1),
    }


def measure_latencies(trace: Trace) -> List[int]:
    """Time from each leader failure to the next promotion.

    A failure instant is the start of the run, a crash of the current leader,
    or a partition that leaves the current leader without a majority.
    """
    n = trace.n or 0
    majority = n // 2 + 1
    leader: Optional[Tuple[int, int]] = None  # (term, server)
    failed_at: Optional[int] = 0
    failed_term = 0
    latencies: List[int] = []

    for event in trace:
        payload = event.payload
        if event.kind is EventKind.ROLE_CHANGE:
            server, term = payload["server"], payload["term"]
            if payload["role"] == "leader":
                if leader is None or term > leader[0]:
                    leader = (term, server)
                if failed_at is not None and term > failed_term:
                    latencies.append(event.time - failed_at)
                    failed_at = None
            elif leader is not None and leader[1] == server:
                leader = None
        elif event.kind is EventKind.CRASH:
            if leader is not None and leader[1] == payload["server"]:
                if failed_at is None:
                    failed_at, failed_term = event.time, leader[0]
                leader = None
        elif event.kind is EventKind.PARTITION_SET and leader is not None:
            group = next(g for g in payload["groups"] if leader[1] in g)
            if len(group) < majority and failed_at is None:
                failed_at, failed_term = event.time, leader[0]
    return latencies


def measure_election(trace: Trace) -> Dict[str, object]:
    """Election-related metric fields of a trace."""
    fields: Dict[str, object] = dict(_election_counts(trace))
    fields["election_latencies"] = measure_latencies(trace)
    fields["vote_entries_shipped"] = sum(
        len(event.payload["msg"].get("entries", []))
        for event in trace.of_kind(EventKind.SEND_MSG)
        if event.payload["msg"]["type"] in VOTE_RESPONSE_TYPES
    )
    return fields


def collect_metrics(trace: Trace) -> RunMetrics:
    fields = measure_election(trace)
    append_shipped = duplicate = redundant = sends = 0
    for event in trace.of_kind(EventKind.SEND_MSG, EventKind.DELIVER_MSG):
        msg = event.payload["msg"]
        if event.kind is EventKind.SEND_MSG:
            sends += 1
            if msg["type"] == "append_entries":
                append_shipped += len(msg["entries"])
        elif msg["type"] == "append_entries":
            duplicate += event.payload.get("held_rewritten", 0)
            redundant += event.payload.get("held_identical", 0)

    return RunMetrics(
        **fields,
        append_entries_shipped=append_shipped,
        duplicate_entry_transmissions=duplicate,
        redundant_entry_transmissions=redundant,
        committed_ops=len({event.payload["op"] for event in trace.of_kind(EventKind.APPLY_OP)}),
        messages_total=sends,
        messages_dropped=len(trace.of_kind(EventKind.DROP_MSG)),
        not_leader_rejects=len(trace.of_kind(EventKind.NOT_LEADER_REJECT)),
        crashes=len(trace.of_kind(EventKind.CRASH)),
    )
