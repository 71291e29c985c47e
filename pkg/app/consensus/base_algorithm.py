"""
Base class for the consensus algorithms.

A ConsensusAlgorithm turns (NodeState, Input) into (NodeState, Effects). The
shared parts (AppendEntries, client requests, timers, restarts) are handled
here; subclasses supply leader election and the commit rule.
"""

from typing import ClassVar, FrozenSet, Iterable, List, Optional, Tuple, Type

from app.consensus.mutations import Mutation
from app.consensus.replication import (
    handle_append_entries,
    handle_append_entries_response,
    handle_client_request,
    leader_tick,
)
from app.consensus.types import (
    AppendEntriesReq,
    AppendEntriesResp,
    ClientRequest,
    Deliver,
    Effect,
    Input,
    InternalFault,
    Message,
    NodeState,
    Persist,
    ResetTimer,
    Restart,
    Role,
    RoleChange,
    Send,
    ServerId,
    Step,
    TimerFire,
    TimerKind,
)
from app.core.config import ClusterConfig


class ConsensusAlgorithm:
    """Pure state machine for one algorithm, shared by the simulator and the explorer."""

    name: ClassVar[str]
    vote_request_type: ClassVar[Type]
    vote_response_type: ClassVar[Type]

    def __init__(
        self,
        cluster: ClusterConfig,
        mutations: Iterable[Mutation] = (),
        batch_cap: Optional[int] = None,
    ):
        self.cluster = cluster
        self.mutations: FrozenSet[Mutation] = frozenset(mutations)
        self.batch_cap = batch_cap
        for mutation in self.mutations:
            if mutation.algorithm != self.name:
                raise ValueError(f"Mutation {mutation.value!r} does not apply to {self.name}")

    def __repr__(self) -> str:
        muts = ",".join(sorted(m.value for m in self.mutations))
        return f"{type(self).__name__}(n={self.cluster.n}, mutations=[{muts}])"

    # algorithm-specific hooks

    def start_election(self, state: NodeState) -> Step:
        raise NotImplementedError

    def handle_vote_request(self, state: NodeState, sender: ServerId, req: Message) -> Tuple[NodeState, Message, List[Effect]]:
        raise NotImplementedError

    def handle_vote_response(self, state: NodeState, sender: ServerId, resp: Message) -> Step:
        raise NotImplementedError

    def advance_commit(self, state: NodeState) -> Step:
        raise NotImplementedError

    def candidate_sees_leader(self, state: NodeState, req: AppendEntriesReq) -> NodeState:
        raise NotImplementedError

    # shared entry points

    def initial_state(self, server_id: ServerId) -> NodeState:
        return NodeState(server_id=server_id)

    def step(self, state: NodeState, inp: Input) -> Step:
        """Handle one input. Raises InternalFault or NotLeader."""
        before = state
        state, effects = self._dispatch(state, inp)

        if (
            state.role is Role.FOLLOWER
            and before.role is not Role.FOLLOWER
            and not isinstance(inp, Restart)
        ):
            effects.insert(0, RoleChange(Role.FOLLOWER, state.current_term))
        if state.persistent() != before.persistent():
            effects.insert(0, Persist())
        return state, effects

    def _dispatch(self, state: NodeState, inp: Input) -> Step:
        if isinstance(inp, Deliver):
            return self._deliver(state, inp.sender, inp.message)
        if isinstance(inp, TimerFire):
            if inp.timer is TimerKind.ELECTION:
                if state.role is Role.LEADER:
                    return state, []
                return self.start_election(state)
            if state.role is not Role.LEADER:
                return state, []
            state, effects = leader_tick(state, self.cluster.n, self.batch_cap)
            return state, effects + [ResetTimer(TimerKind.HEARTBEAT)]
        if isinstance(inp, ClientRequest):
            return handle_client_request(state, inp.operation, self.cluster.n, self.advance_commit, self.batch_cap)
        if isinstance(inp, Restart):
            return state, [ResetTimer(TimerKind.ELECTION)]
        raise InternalFault(f"unknown input {inp!r}", server_id=state.server_id)

    def _deliver(self, state: NodeState, sender: ServerId, message: Message) -> Step:
        if isinstance(message, AppendEntriesReq):
            return self._on_append_entries(state, sender, message)
        if isinstance(message, AppendEntriesResp):
            return handle_append_entries_response(state, sender, message, self.advance_commit, self.batch_cap)
        if isinstance(message, self.vote_request_type):
            state, resp, effects = self.handle_vote_request(state, sender, message)
            return state, effects + [Send(sender, resp)]
        if isinstance(message, self.vote_response_type):
            return self.handle_vote_response(state, sender, message)
        raise InternalFault(f"{self.name} cannot handle {type(message).__name__}", server_id=state.server_id)

    def _on_append_entries(self, state: NodeState, sender: ServerId, req: AppendEntriesReq) -> Step:
        if req.term == state.current_term:
            if state.role is Role.LEADER:
                raise InternalFault(
                    f"two leaders in term {req.term}: {state.server_id} and {req.leader_id}",
                    server_id=state.server_id,
                )
            if state.role is Role.CANDIDATE:
                state = self.candidate_sees_leader(state, req)
        state, resp, effects = handle_append_entries(state, req)
        return state, effects + [Send(sender, resp)]
