"""
Raft-style MultiPaxos.

Terms are allocated by residue (a server s only stands in terms t with
t mod n == s), voters grant any candidate with a higher term and ship back
their log suffix, and the winning candidate keeps the greatest-term entry per
index and rewrites it into its own term before replicating.
"""

from dataclasses import replace
from typing import Dict, FrozenSet, List, Optional, Tuple

from app.consensus.base_algorithm import ConsensusAlgorithm
from app.consensus.mutations import Mutation
from app.consensus.replication import (
    apply_committed,
    leader_tick,
    majority,
    observe_term,
    quorum_index,
)
from app.consensus.types import (
    AppendEntriesReq,
    Broadcast,
    Effect,
    InternalFault,
    LeaderState,
    LogEntry,
    LogIndex,
    NodeState,
    PaxosCandidateState,
    PaxosVoteReq,
    PaxosVoteResp,
    ResetTimer,
    Role,
    RoleChange,
    ServerId,
    Step,
    Term,
    TimerKind,
    entries_after,
)

NO_MUTATIONS: FrozenSet[Mutation] = frozenset()


def next_candidate_term(current_term: Term, n: int, server_id: ServerId) -> Term:
    """Smallest t > current_term with t mod n == server_id."""
    t = current_term + 1
    return t + (server_id - t) % n


def paxos_start_election(
    state: NodeState,
    n: int,
    mutations: FrozenSet[Mutation] = NO_MUTATIONS,
    batch_cap: Optional[int] = None,
) -> Step:
    term = next_candidate_term(state.current_term, n, state.server_id)
    candidate = PaxosCandidateState(
        votes=frozenset({state.server_id}),
        entries_seen=entries_after(state.log, state.commit_index),
        commit_snapshot=state.commit_index,
    )
    state = replace(
        state, current_term=term, voted_for=None, role=Role.CANDIDATE, candidate=candidate, leader=None
    )
    effects: List[Effect] = [
        RoleChange(Role.CANDIDATE, term),
        Broadcast(PaxosVoteReq(term, state.commit_index)),
        ResetTimer(TimerKind.ELECTION),
    ]
    if len(candidate.votes) >= majority(n):
        state, promoted = paxos_merge_and_promote(state, n, mutations, batch_cap)
        effects += promoted
    return state, effects


def paxos_handle_request_vote(state: NodeState, req: PaxosVoteReq) -> Tuple[NodeState, PaxosVoteResp, List[Effect]]:
    if req.term <= state.current_term:
        return state, PaxosVoteResp(state.current_term, False), []
    state, _ = observe_term(state, req.term)
    resp = PaxosVoteResp(state.current_term, True, entries_after(state.log, req.leader_commit))
    return state, resp, [ResetTimer(TimerKind.ELECTION)]


def paxos_handle_vote_response(
    state: NodeState,
    sender: ServerId,
    resp: PaxosVoteResp,
    n: int,
    mutations: FrozenSet[Mutation] = NO_MUTATIONS,
    batch_cap: Optional[int] = None,
) -> Step:
    state, stepped = observe_term(state, resp.term)
    if stepped or state.role is not Role.CANDIDATE or resp.term < state.current_term:
        return state, []
    if not resp.vote_granted:
        return state, []

    candidate = state.candidate
    seen = list(candidate.entries_seen)
    for index, entry in resp.entries:
        if index > candidate.commit_snapshot and (index, entry) not in seen:
            seen.append((index, entry))
    candidate = replace(candidate, votes=candidate.votes | {sender}, entries_seen=tuple(seen))
    state = replace(state, candidate=candidate)

    if len(candidate.votes) >= majority(n):
        return paxos_merge_and_promote(state, n, mutations, batch_cap)
    return state, []


def _pick_entries(
    state: NodeState, mutations: FrozenSet[Mutation]
) -> Dict[LogIndex, LogEntry]:
    picked: Dict[LogIndex, LogEntry] = {}
    first_wins = Mutation.PAXOS_PICK_FIRST_NOT_GREATEST in mutations
    for index, entry in state.candidate.entries_seen:
        current = picked.get(index)
        if current is None:
            picked[index] = entry
        elif first_wins:
            continue
        elif entry.term > current.term:
            picked[index] = entry
        elif entry.term == current.term and entry.operation != current.operation:
            raise InternalFault(
                f"index {index} holds {current.operation!r} and {entry.operation!r} in term {entry.term}",
                server_id=state.server_id,
            )
    return picked


def paxos_merge_and_promote(
    state: NodeState,
    n: int,
    mutations: FrozenSet[Mutation] = NO_MUTATIONS,
    batch_cap: Optional[int] = None,
) -> Step:
    """Take the greatest-term entry at every index seen, rewrite it to our term, lead."""
    snapshot = state.candidate.commit_snapshot
    picked = _pick_entries(state, mutations)
    indices = sorted(picked)
    if indices != list(range(snapshot + 1, snapshot + 1 + len(indices))):
        raise InternalFault(f"merged indices {indices} are not contiguous after {snapshot}", server_id=state.server_id)

    keep_terms = Mutation.PAXOS_NO_TERM_REWRITE in mutations
    merged = tuple(
        picked[i] if keep_terms else LogEntry(picked[i].operation, state.current_term) for i in indices
    )
    log = state.log[:snapshot] + merged
    state = replace(
        state,
        log=log,
        role=Role.LEADER,
        candidate=None,
        leader=LeaderState.start(n, state.server_id, state.commit_index + 1, len(log)),
    )
    effects: List[Effect] = [RoleChange(Role.LEADER, state.current_term)]
    state, sends = leader_tick(state, n, batch_cap)
    state, applied = paxos_advance_commit(state, n)
    return state, effects + sends + applied


def paxos_advance_commit(state: NodeState, n: int) -> Step:
    """Commit the highest index held by a majority; no term guard."""
    target = quorum_index(state.leader.match_index, majority(n))
    if target <= state.commit_index:
        return state, []
    return apply_committed(replace(state, commit_index=target))


class PaxosAlgorithm(ConsensusAlgorithm):
    name = "paxos"
    vote_request_type = PaxosVoteReq
    vote_response_type = PaxosVoteResp

    def start_election(self, state: NodeState) -> Step:
        return paxos_start_election(state, self.cluster.n, self.mutations, self.batch_cap)

    def handle_vote_request(self, state: NodeState, sender: ServerId, req: PaxosVoteReq) -> Tuple[NodeState, PaxosVoteResp, List[Effect]]:
        return paxos_handle_request_vote(state, req)

    def handle_vote_response(self, state: NodeState, sender: ServerId, resp: PaxosVoteResp) -> Step:
        return paxos_handle_vote_response(state, sender, resp, self.cluster.n, self.mutations, self.batch_cap)

    def advance_commit(self, state: NodeState) -> Step:
        return paxos_advance_commit(state, self.cluster.n)

    def candidate_sees_leader(self, state: NodeState, req: AppendEntriesReq) -> NodeState:
        # terms are owned by one server, so nobody else can lead in ours
        raise InternalFault(
            f"candidate in term {state.current_term} got AppendEntries from {req.leader_id} in the same term",
            server_id=state.server_id,
        )
