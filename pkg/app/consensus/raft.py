"""
Raft leader election and commitment.

One vote per server per term (votedFor), votes only for candidates whose log
is at least as up-to-date, and a leader only counts replicas for entries of
its own term when advancing commitIndex.
"""

from dataclasses import replace
from typing import FrozenSet, List, Optional, Tuple

from app.consensus.base_algorithm import ConsensusAlgorithm
from app.consensus.mutations import Mutation
from app.consensus.replication import (
    apply_committed,
    leader_tick,
    majority,
    observe_term,
)
from app.consensus.types import (
    AppendEntriesReq,
    Broadcast,
    Effect,
    LeaderState,
    LogIndex,
    NodeState,
    RaftCandidateState,
    RaftVoteReq,
    RaftVoteResp,
    ResetTimer,
    Role,
    RoleChange,
    ServerId,
    Step,
    Term,
    TimerKind,
    last_log_info,
)

NO_MUTATIONS: FrozenSet[Mutation] = frozenset()


def raft_up_to_date(candidate_last: Tuple[LogIndex, Term], own_last: Tuple[LogIndex, Term]) -> bool:
    """Compare (last index, last term) pairs: higher term wins, then longer log."""
    cand_index, cand_term = candidate_last
    own_index, own_term = own_last
    return cand_term > own_term or (cand_term == own_term and cand_index >= own_index)


def raft_start_election(
    state: NodeState,
    n: int,
    mutations: FrozenSet[Mutation] = NO_MUTATIONS,
    batch_cap: Optional[int] = None,
) -> Step:
    term = state.current_term + 1
    state = replace(
        state,
        current_term=term,
        voted_for=state.server_id,
        role=Role.CANDIDATE,
        candidate=RaftCandidateState(votes=frozenset({state.server_id})),
        leader=None,
    )
    last_index, last_term = last_log_info(state.log)
    effects: List[Effect] = [
        RoleChange(Role.CANDIDATE, term),
        Broadcast(RaftVoteReq(term, state.server_id, last_index, last_term)),
        ResetTimer(TimerKind.ELECTION),
    ]
    if majority(n) <= 1:
        state, promoted = _become_leader(state, n, mutations, batch_cap)
        effects += promoted
    return state, effects


def raft_handle_request_vote(
    state: NodeState,
    req: RaftVoteReq,
    mutations: FrozenSet[Mutation] = NO_MUTATIONS,
) -> Tuple[NodeState, RaftVoteResp, List[Effect]]:
    state, _ = observe_term(state, req.term)
    if req.term < state.current_term:
        return state, RaftVoteResp(state.current_term, False), []

    free_to_vote = state.voted_for in (None, req.candidate_id)
    if Mutation.RAFT_NO_VOTED_FOR in mutations:
        free_to_vote = True
    up_to_date = raft_up_to_date((req.last_log_index, req.last_log_term), last_log_info(state.log))
    if Mutation.RAFT_NO_UP_TO_DATE_CHECK in mutations:
        up_to_date = True

    if not (free_to_vote and up_to_date):
        return state, RaftVoteResp(state.current_term, False), []
    state = replace(state, voted_for=req.candidate_id)
    return state, RaftVoteResp(state.current_term, True), [ResetTimer(TimerKind.ELECTION)]


def raft_handle_vote_response(
    state: NodeState,
    sender: ServerId,
    resp: RaftVoteResp,
    n: int,
    mutations: FrozenSet[Mutation] = NO_MUTATIONS,
    batch_cap: Optional[int] = None,
) -> Step:
    state, stepped = observe_term(state, resp.term)
    if stepped or state.role is not Role.CANDIDATE or resp.term < state.current_term:
        return state, []
    if not resp.vote_granted:
        return state, []

    candidate = RaftCandidateState(votes=state.candidate.votes | {sender})
    state = replace(state, candidate=candidate)
    if len(candidate.votes) >= majority(n):
        return _become_leader(state, n, mutations, batch_cap)
    return state, []


def _become_leader(
    state: NodeState, n: int, mutations: FrozenSet[Mutation], batch_cap: Optional[int]
) -> Step:
    state = replace(
        state,
        role=Role.LEADER,
        candidate=None,
        leader=LeaderState.start(n, state.server_id, len(state.log) + 1, len(state.log)),
    )
    effects: List[Effect] = [RoleChange(Role.LEADER, state.current_term)]
    state, sends = leader_tick(state, n, batch_cap)
    state, applied = raft_advance_commit(state, n, mutations)
    return state, effects + sends + applied


def raft_on_append_entries_as_candidate(state: NodeState, req: AppendEntriesReq) -> NodeState:
    """A candidate that hears from a leader of its own term or later becomes a follower."""
    if req.term >= state.current_term:
        return state.as_follower()
    return state


def raft_advance_commit(
    state: NodeState, n: int, mutations: FrozenSet[Mutation] = NO_MUTATIONS
) -> Step:
    guard = Mutation.RAFT_NO_COMMIT_TERM_GUARD not in mutations
    quorum = majority(n)
    for index in range(len(state.log), state.commit_index, -1):
        if guard and state.log[index - 1].term != state.current_term:
            continue
        replicas = sum(1 for match in state.leader.match_index if match >= index)
        if replicas >= quorum:
            return apply_committed(replace(state, commit_index=index))
    return state, []


class RaftAlgorithm(ConsensusAlgorithm):
    name = "raft"
    vote_request_type = RaftVoteReq
    vote_response_type = RaftVoteResp

    def start_election(self, state: NodeState) -> Step:
        return raft_start_election(state, self.cluster.n, self.mutations, self.batch_cap)

    def handle_vote_request(self, state: NodeState, sender: ServerId, req: RaftVoteReq) -> Tuple[NodeState, RaftVoteResp, List[Effect]]:
        return raft_handle_request_vote(state, req, self.mutations)

    def handle_vote_response(self, state: NodeState, sender: ServerId, resp: RaftVoteResp) -> Step:
        return raft_handle_vote_response(state, sender, resp, self.cluster.n, self.mutations, self.batch_cap)

    def advance_commit(self, state: NodeState) -> Step:
        return raft_advance_commit(state, self.cluster.n, self.mutations)

    def candidate_sees_leader(self, state: NodeState, req: AppendEntriesReq) -> NodeState:
        return raft_on_append_entries_as_candidate(state, req)
