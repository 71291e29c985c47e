"""
Term discipline and the AppendEntries pipeline.

Both algorithms replicate their logs the same way; they differ only in how a
leader is elected and in when a leader may advance its commit index, which
the algorithm classes pass in as ``advance_commit``.
"""

from dataclasses import replace
from typing import Callable, List, Optional, Sequence, Tuple

from app.consensus.types import (
    AppendEntriesReq,
    AppendEntriesResp,
    Apply,
    Effect,
    InternalFault,
    LogEntry,
    LogIndex,
    NodeState,
    NotLeader,
    Operation,
    ResetTimer,
    Role,
    Send,
    ServerId,
    Step,
    Term,
    TimerKind,
    term_at,
)

CommitRule = Callable[[NodeState], Step]


def majority(n: int) -> int:
    return n // 2 + 1


def quorum_index(match_index: Sequence[LogIndex], quorum: int) -> LogIndex:
    """Largest N such that at least ``quorum`` servers have matchIndex >= N."""
    return sorted(match_index, reverse=True)[quorum - 1]


def observe_term(state: NodeState, msg_term: Term) -> Tuple[NodeState, bool]:
    """Adopt a newer term and step down. Returns (state, stepped_down)."""
    if msg_term <= state.current_term:
        return state, False
    stepped = replace(state.as_follower(), current_term=msg_term, voted_for=None)
    return stepped, True


def apply_committed(state: NodeState) -> Step:
    """Apply every entry in (lastApplied, commitIndex] in index order."""
    if state.commit_index > len(state.log):
        raise InternalFault(
            f"commitIndex {state.commit_index} beyond log length {len(state.log)}",
            server_id=state.server_id,
        )
    if state.commit_index <= state.last_applied:
        return state, []
    effects: List[Effect] = [
        Apply(index, state.log[index - 1].operation, state.log[index - 1].term)
        for index in range(state.last_applied + 1, state.commit_index + 1)
    ]
    return replace(state, last_applied=state.commit_index), effects


def _prefix_matches(state: NodeState, prev_log_index: LogIndex, prev_log_term: Term) -> bool:
    if prev_log_index == 0:
        return True
    if prev_log_index > len(state.log):
        return False
    return state.log[prev_log_index - 1].term == prev_log_term


def handle_append_entries(state: NodeState, req: AppendEntriesReq) -> Tuple[NodeState, AppendEntriesResp, List[Effect]]:
    """AppendEntries receiver, identical for both algorithms.

    The caller has already dealt with the receiver's role; this function
    expects a follower (or a server about to become one).
    """
    state, _ = observe_term(state, req.term)
    if req.term < state.current_term:
        return state, AppendEntriesResp(state.current_term, False, 0), []

    effects: List[Effect] = [ResetTimer(TimerKind.ELECTION)]
    if not _prefix_matches(state, req.prev_log_index, req.prev_log_term):
        return state, AppendEntriesResp(state.current_term, False, 0), effects

    log = list(state.log)
    index = req.prev_log_index
    for entry in req.entries:
        index += 1
        if index <= len(log):
            if log[index - 1].term == entry.term:
                continue
            del log[index - 1:]
        log.append(entry)

    last_new = req.prev_log_index + len(req.entries)
    commit_index = state.commit_index
    if req.leader_commit > commit_index:
        commit_index = max(commit_index, min(req.leader_commit, last_new))

    state = replace(state, log=tuple(log), commit_index=commit_index)
    state, applied = apply_committed(state)
    return state, AppendEntriesResp(state.current_term, True, last_new), effects + applied


def append_request(state: NodeState, peer: ServerId, batch_cap: Optional[int] = None) -> AppendEntriesReq:
    """Build the AppendEntries a leader owes ``peer`` given its nextIndex."""
    prev_index = state.leader.next_index[peer] - 1
    end = len(state.log) if batch_cap is None else min(len(state.log), prev_index + batch_cap)
    return AppendEntriesReq(
        term=state.current_term,
        leader_id=state.server_id,
        prev_log_index=prev_index,
        prev_log_term=term_at(state.log, prev_index),
        entries=state.log[prev_index:end],
        leader_commit=state.commit_index,
    )


def leader_tick(state: NodeState, n: int, batch_cap: Optional[int] = None) -> Step:
    """Heartbeat and retransmission: one AppendEntries per peer from its nextIndex."""
    if state.role is not Role.LEADER:
        return state, []
    effects: List[Effect] = [
        Send(peer, append_request(state, peer, batch_cap))
        for peer in range(n)
        if peer != state.server_id
    ]
    return state, effects


def handle_append_entries_response(
    state: NodeState,
    sender: ServerId,
    resp: AppendEntriesResp,
    advance_commit: CommitRule,
    batch_cap: Optional[int] = None,
) -> Step:
    state, stepped = observe_term(state, resp.term)
    if stepped or state.role is not Role.LEADER or resp.term < state.current_term:
        return state, []

    leader = state.leader
    if resp.success:
        match = max(leader.match_index[sender], resp.last_appended)
        state = replace(state, leader=leader.with_peer(sender, match + 1, match))
        return advance_commit(state)

    next_index = max(1, leader.next_index[sender] - 1)
    state = replace(state, leader=leader.with_peer(sender, next_index, leader.match_index[sender]))
    return state, [Send(sender, append_request(state, sender, batch_cap))]


def handle_client_request(
    state: NodeState,
    operation: Operation,
    n: int,
    advance_commit: CommitRule,
    batch_cap: Optional[int] = None,
) -> Step:
    if state.role is not Role.LEADER:
        raise NotLeader(state.server_id, operation)

    log = state.log + (LogEntry(operation, state.current_term),)
    leader = state.leader.with_peer(state.server_id, len(log) + 1, len(log))
    state = replace(state, log=log, leader=leader)
    state, sends = leader_tick(state, n, batch_cap)
    state, applied = advance_commit(state)
    return state, sends + applied
