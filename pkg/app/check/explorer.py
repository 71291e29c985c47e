"""
Bounded exhaustive exploration of small clusters.

The explorer drives the same ConsensusAlgorithm the simulator uses, but
instead of sampling one schedule it enumerates every interleaving of message
deliveries, election timeouts, heartbeats, client requests and faults up to
the configured bounds, breadth first, skipping states it has already seen,
so the first counterexample found is a shortest one.
A leader heartbeats only while nothing is in flight to or from it, and
responses their receiver can only ignore are consumed without branching.
Safety is checked inline on every transition. A counterexample path is
replayed into an ordinary Trace so the trace oracles and the trace file
format apply to it unchanged.
"""

import hashlib
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Deque, Dict, FrozenSet, Hashable, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.check.oracles import Violation, ViolationKind, check_all
from app.consensus.mutations import Mutation
from app.consensus.paxos import next_candidate_term
from app.consensus.registry import get_algorithm
from app.consensus.types import (
    RESPONSE_TYPES,
    AppendEntriesReq,
    AppendEntriesResp,
    Apply,
    Broadcast,
    ClientRequest,
    Deliver,
    Effect,
    Input,
    InternalFault,
    Message,
    NodeState,
    PersistentState,
    Persist,
    Restart,
    Role,
    RoleChange,
    Send,
    ServerId,
    TimerFire,
    TimerKind,
    log_payload,
)
from app.core.config import ClusterConfig
from app.core.observability import get_logger
from app.sim.simulator import append_entries_details
from app.sim.trace import EventKind, Trace, prefix_digest

logger = get_logger(__name__)

OP_NAMES = "ABCDEFGH"
PROGRESS_EVERY = 100_000

Move = Tuple[Any, ...]
Failure = Tuple[ViolationKind, str]
Trail = Optional[Tuple[Move, Any]]


class SmallConfig(BaseModel):
    """Bounds of one exploration."""

    model_config = ConfigDict(extra="forbid")

    algorithm: Literal["paxos", "raft"] = "raft"
    n: int = Field(3, ge=1, le=3, description="Cluster size")
    ops: int = Field(2, ge=0, le=2, description="Client operations to submit")
    max_term: int = Field(4, ge=1, le=4, description="No election may start beyond this term")
    depth: int = Field(200, ge=1, description="Max transitions per branch")
    max_crashes: int = Field(1, ge=0, description="Crashes per branch")
    partitions: bool = Field(False, description="Allow isolating one server, then healing")
    max_states: int = Field(2_000_000, ge=1, description="Visited-state cap")
    mutations: List[Mutation] = Field(default_factory=list)
    candidates: Optional[List[int]] = Field(None, description="Servers allowed to start elections")
    compact: bool = Field(False, description="Store state digests instead of states")

    @model_validator(mode="after")
    def _consistent(self) -> "SmallConfig":
        for mutation in self.mutations:
            if mutation.algorithm != self.algorithm:
                raise ValueError(f"mutation {mutation.value!r} does not apply to {self.algorithm}")
        for server in self.candidates or []:
            if not 0 <= server < self.n:
                raise ValueError(f"candidate {server} is not in 0..{self.n - 1}")
        return self


@dataclass(frozen=True)
class World:
    """Global state: every server, every link, and the ghost facts checked inline."""

    nodes: Tuple[Union[NodeState, PersistentState], ...]
    links: Tuple[Tuple[Message, ...], ...]  # src * n + dst
    next_op: int = 0
    crashes: int = 0
    partition: Optional[Tuple[int, ...]] = None
    partitions_used: int = 0
    # per index: the op first applied there and the lowest leader term that committed it
    chosen: Tuple[Tuple[str, Optional[int]], ...] = ()
    leaders: FrozenSet[Tuple[int, ServerId]] = frozenset()


@dataclass
class ExploreResult:
    status: Literal["ok", "counterexample", "inconclusive"]
    visited: int
    transitions: int
    max_depth: int
    frontier: int
    truncated: bool
    capped: bool
    trace: Optional[Trace] = None
    violations: List[Violation] = field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "visited": self.visited,
            "transitions": self.transitions,
            "max_depth": self.max_depth,
            "frontier": self.frontier,
            "truncated": self.truncated,
            "capped": self.capped,
        }


class NullRecorder:
    """Recorder used while searching: records nothing."""

    def __getattr__(self, name: str):
        return lambda *args, **kwargs: None


class TraceRecorder:
    """Builds a Trace while a path is replayed; mirrors link contents with msg ids."""

    def __init__(self, n: int):
        self.n = n
        self.trace = Trace()
        self.time = 0
        self._next_id = 0
        self._ids: Dict[Tuple[ServerId, ServerId], List[int]] = {}

    def _record(self, kind: EventKind, **payload: Any) -> None:
        self.trace.record(self.time, kind, **payload)

    def start(self, algorithm: str, mutations: List[Mutation]) -> None:
        self._record(
            EventKind.RUN_START,
            algorithm=algorithm,
            n=self.n,
            seed=0,
            mutations=sorted(m.value for m in mutations),
        )

    def tick_clock(self) -> None:
        self.time += 1

    def send(self, src: ServerId, dst: ServerId, message: Message, state: NodeState, queued: bool) -> None:
        msg_id = self._next_id
        self._next_id += 1
        payload: Dict[str, Any] = {"src": src, "dst": dst, "msg_id": msg_id, "msg": message.to_payload()}
        if isinstance(message, AppendEntriesReq):
            payload["leader_prefix"] = prefix_digest(state.log, message.prev_log_index)
        self._record(EventKind.SEND_MSG, **payload)
        if queued:
            self._ids.setdefault((src, dst), []).append(msg_id)

    def drop(self, src: ServerId, dst: ServerId, message: Message, reason: str, queued: bool) -> None:
        msg_id = self._ids[(src, dst)].pop(0) if queued else self._next_id - 1
        self._record(
            EventKind.DROP_MSG, src=src, dst=dst, msg_id=msg_id, msg=message.to_payload(), reason=reason
        )

    def deliver(self, src: ServerId, dst: ServerId, message: Message, details: Dict[str, Any]) -> None:
        msg_id = self._ids[(src, dst)].pop(0)
        self._record(EventKind.DELIVER_MSG, src=src, dst=dst, msg_id=msg_id, msg=message.to_payload(), **details)

    def timer(self, server: ServerId, kind: TimerKind) -> None:
        self._record(EventKind.TIMER_FIRE, server=server, timer=kind.value)

    def persist(self, state: NodeState) -> None:
        self._record(EventKind.PERSIST_WRITE, **state.persistent().to_payload())

    def apply(self, state: NodeState, effect: Apply) -> None:
        self._record(
            EventKind.APPLY_OP,
            server=state.server_id,
            index=effect.index,
            op=effect.operation,
            term=effect.term,
            leader_term=state.current_term if state.role is Role.LEADER else None,
        )

    def role_change(self, state: NodeState, effect: RoleChange) -> None:
        payload: Dict[str, Any] = {
            "server": state.server_id,
            "role": effect.role.value,
            "term": effect.term,
            "commit_index": state.commit_index,
        }
        if effect.role is Role.LEADER:
            payload["log"] = log_payload(state.log)
        self._record(EventKind.ROLE_CHANGE, **payload)

    def client_submit(self, server: ServerId, op: str, index: int) -> None:
        self._record(EventKind.CLIENT_SUBMIT, server=server, op=op, index=index)

    def crash(self, state: NodeState) -> None:
        self._record(
            EventKind.CRASH,
            server=state.server_id,
            was_leader=state.role is Role.LEADER,
            term=state.current_term,
        )

    def restart(self, persisted: PersistentState) -> None:
        self._record(EventKind.RESTART, **persisted.to_payload())

    def partition(self, groups: List[List[ServerId]]) -> None:
        self._record(EventKind.PARTITION_SET, groups=groups)

    def heal(self) -> None:
        self._record(EventKind.HEAL)

    def fault(self, server: ServerId, error: InternalFault) -> None:
        self._record(EventKind.INTERNAL_FAULT, server=server, error=str(error))


class _Transition:
    """Mutable working copy of a World while one move is applied."""

    def __init__(self, explorer: "Explorer", world: World, recorder: Any):
        self.explorer = explorer
        self.n = explorer.cfg.n
        self.world = world
        self.nodes = list(world.nodes)
        self.links = [list(link) for link in world.links]
        self.chosen = list(world.chosen)
        self.leaders = set(world.leaders)
        self.recorder = recorder
        self.failure: Optional[Failure] = None

    def up(self, server: ServerId) -> bool:
        return isinstance(self.nodes[server], NodeState)

    def partitioned(self, src: ServerId, dst: ServerId) -> bool:
        partition = self.world.partition
        return partition is not None and partition[src] != partition[dst]

    def step(self, server: ServerId, inp: Input, before_effects=None) -> None:
        state = self.nodes[server]
        try:
            new_state, effects = self.explorer.algorithm.step(state, inp)
        except InternalFault as fault:
            if before_effects is not None:
                before_effects(state, [])
            self.recorder.fault(server, fault)
            self.failure = (ViolationKind.INTERNAL_FAULT, str(fault))
            return
        if before_effects is not None:
            before_effects(state, effects)
        self.nodes[server] = new_state
        self.carry_out(new_state, effects)

    def carry_out(self, state: NodeState, effects: List[Effect]) -> None:
        server = state.server_id
        for effect in effects:
            if isinstance(effect, Persist):
                self.recorder.persist(state)
            elif isinstance(effect, Send):
                self.send(server, effect.to, effect.message)
            elif isinstance(effect, Broadcast):
                for peer in range(self.n):
                    if peer != server:
                        self.send(server, peer, effect.message)
            elif isinstance(effect, Apply):
                self.recorder.apply(state, effect)
                self.check_apply(state, effect)
            elif isinstance(effect, RoleChange):
                self.recorder.role_change(state, effect)
                if effect.role is Role.LEADER:
                    self.check_promotion(state)

    def send(self, src: ServerId, dst: ServerId, message: Message) -> None:
        queued = self.up(dst) and not self.partitioned(src, dst)
        self.recorder.send(src, dst, message, self.nodes[src], queued)
        if queued:
            self.links[src * self.n + dst].append(message)
        else:
            reason = "partition" if self.partitioned(src, dst) else "crashed"
            self.recorder.drop(src, dst, message, reason, False)

    def clear_link(self, src: ServerId, dst: ServerId, reason: str) -> None:
        link = self.links[src * self.n + dst]
        for message in link:
            self.recorder.drop(src, dst, message, reason, True)
        link.clear()

    def deliver(self, src: ServerId, dst: ServerId) -> None:
        message = self.links[src * self.n + dst].pop(0)

        def record(state: NodeState, effects: List[Effect]) -> None:
            details = append_entries_details(state, message, effects) if isinstance(message, AppendEntriesReq) else {}
            self.recorder.deliver(src, dst, message, details)

        self.step(dst, Deliver(src, message), record)

    # inline checks

    def check_apply(self, state: NodeState, effect: Apply) -> None:
        leader_term = state.current_term if state.role is Role.LEADER else None
        if effect.index > len(self.chosen):
            self.chosen.append((effect.operation, leader_term))
            return
        op, committed_in = self.chosen[effect.index - 1]
        if op != effect.operation:
            self.failure = (
                ViolationKind.STATE_MACHINE_SAFETY,
                f"index {effect.index} applied as {op!r} and {effect.operation!r}",
            )
        elif leader_term is not None and (committed_in is None or leader_term < committed_in):
            self.chosen[effect.index - 1] = (op, leader_term)

    def check_promotion(self, state: NodeState) -> None:
        term = state.current_term
        for other_term, other in self.leaders:
            if other_term == term and other != state.server_id:
                self.failure = (ViolationKind.ELECTION_SAFETY, f"servers {other} and {state.server_id} lead term {term}")
                return
        self.leaders.add((term, state.server_id))
        for index, (op, committed_in) in enumerate(self.chosen, start=1):
            if committed_in is None or committed_in >= term:
                continue
            if index > len(state.log) or state.log[index - 1].operation != op:
                self.failure = (
                    ViolationKind.LEADER_COMPLETENESS,
                    f"leader {state.server_id} of term {term} lacks {op!r} at index {index}",
                )
                return

    def ignored(self, src: ServerId, dst: ServerId) -> bool:
        """True when the head of src->dst is a response dst can never act on."""
        link = self.links[src * self.n + dst]
        state = self.nodes[dst]
        if not link or not isinstance(link[0], RESPONSE_TYPES) or not isinstance(state, NodeState):
            return False
        message = link[0]
        if message.term != state.current_term:
            return message.term < state.current_term
        # a server never returns to candidate or leader within a term it has left
        if isinstance(message, AppendEntriesResp):
            return state.role is not Role.LEADER
        return state.role is not Role.CANDIDATE or not message.vote_granted

    def consume_ignored_responses(self) -> None:
        """Deliver responses that can only be ignored, so they add no interleavings."""
        progress = True
        while progress and self.failure is None:
            progress = False
            for src in range(self.n):
                for dst in range(self.n):
                    if self.ignored(src, dst):
                        self.deliver(src, dst)
                        progress = True

    def finish(self, **changes: Any) -> World:
        return replace(
            self.world,
            nodes=tuple(self.nodes),
            links=tuple(tuple(link) for link in self.links),
            chosen=tuple(self.chosen),
            leaders=frozenset(self.leaders),
            **changes,
        )


class Explorer:
    def __init__(self, cfg: SmallConfig):
        self.cfg = cfg
        self.cluster = ClusterConfig(n=cfg.n)
        self.algorithm = get_algorithm(cfg.algorithm, self.cluster, cfg.mutations)
        self.candidates = list(range(cfg.n)) if cfg.candidates is None else sorted(set(cfg.candidates))

    def initial(self) -> World:
        n = self.cfg.n
        return World(
            nodes=tuple(self.algorithm.initial_state(s) for s in range(n)),
            links=((),) * (n * n),
        )

    def _next_term(self, state: NodeState) -> int:
        if self.cfg.algorithm == "paxos":
            return next_candidate_term(state.current_term, self.cfg.n, state.server_id)
        return state.current_term + 1

    def _tick_useful(self, world: World, leader: ServerId) -> bool:
        """A heartbeat matters only on quiet links and when some live peer is behind the leader."""
        n = self.cfg.n
        if any(world.links[leader * n + peer] or world.links[peer * n + leader] for peer in range(n)):
            return False
        state = world.nodes[leader]
        for peer in range(n):
            other = world.nodes[peer]
            if peer == leader or not isinstance(other, NodeState):
                continue
            if (
                other.current_term != state.current_term
                or other.commit_index < state.commit_index
                or state.leader.match_index[peer] < len(state.log)
            ):
                return True
        return False

    def moves(self, world: World) -> List[Move]:
        n, cfg = self.cfg.n, self.cfg
        nodes = world.nodes
        live = [s for s in range(n) if isinstance(nodes[s], NodeState)]
        leaders = [s for s in live if nodes[s].role is Role.LEADER]
        moves: List[Move] = [
            ("deliver", src, dst) for src in range(n) for dst in range(n) if world.links[src * n + dst]
        ]
        moves += [
            ("timeout", s)
            for s in self.candidates
            if s in live and nodes[s].role is not Role.LEADER and self._next_term(nodes[s]) <= cfg.max_term
        ]
        moves += [("tick", s) for s in leaders if self._tick_useful(world, s)]
        if world.next_op < cfg.ops:
            moves += [("client", s) for s in leaders]
        if world.crashes < cfg.max_crashes:
            moves += [("crash", s) for s in live]
        moves += [("restart", s) for s in range(n) if s not in live]
        if cfg.partitions and n > 1:
            if world.partition is not None:
                moves.append(("heal",))
            elif world.partitions_used == 0:
                moves += [("partition", s) for s in range(n)]
        return moves

    def apply(self, world: World, move: Move, recorder: Any = None) -> Tuple[World, Optional[Failure]]:
        recorder = recorder or NullRecorder()
        t = _Transition(self, world, recorder)
        changes: Dict[str, Any] = {}
        kind = move[0]

        if kind == "deliver":
            t.deliver(move[1], move[2])
        elif kind == "timeout":
            recorder.timer(move[1], TimerKind.ELECTION)
            t.step(move[1], TimerFire(TimerKind.ELECTION))
        elif kind == "tick":
            recorder.timer(move[1], TimerKind.HEARTBEAT)
            t.step(move[1], TimerFire(TimerKind.HEARTBEAT))
        elif kind == "client":
            op = OP_NAMES[world.next_op]

            def submitted(state: NodeState, effects: List[Effect]) -> None:
                recorder.client_submit(move[1], op, len(state.log) + 1)

            t.step(move[1], ClientRequest(op), submitted)
            changes["next_op"] = world.next_op + 1
        elif kind == "crash":
            state = t.nodes[move[1]]
            recorder.crash(state)
            t.nodes[move[1]] = state.persistent()
            for src in range(self.cfg.n):
                t.clear_link(src, move[1], "crashed")
            changes["crashes"] = world.crashes + 1
        elif kind == "restart":
            persisted = t.nodes[move[1]]
            recorder.restart(persisted)
            t.nodes[move[1]] = NodeState.recover(persisted)
            t.step(move[1], Restart())
        elif kind == "partition":
            isolated = move[1]
            others = [s for s in range(self.cfg.n) if s != isolated]
            recorder.partition([[isolated], others])
            changes["partition"] = tuple(0 if s == isolated else 1 for s in range(self.cfg.n))
            changes["partitions_used"] = world.partitions_used + 1
            for other in others:
                t.clear_link(isolated, other, "partition")
                t.clear_link(other, isolated, "partition")
        elif kind == "heal":
            recorder.heal()
            changes["partition"] = None
        else:
            raise ValueError(f"unknown move {move!r}")

        t.world = replace(world, partition=changes.get("partition", world.partition))
        t.consume_ignored_responses()
        return t.finish(**changes), t.failure

    def _key(self, world: World) -> Hashable:
        if self.cfg.compact:
            return hashlib.blake2b(repr(world).encode(), digest_size=16).digest()
        return world

    def explore(self) -> ExploreResult:
        cfg = self.cfg
        logger.info("explorer.start", **cfg.model_dump(mode="json"))
        root = self.initial()
        visited = {self._key(root)}
        # trail: (move, parent trail), None at the root
        queue: Deque[Tuple[World, int, Trail]] = deque([(root, 0, None)])
        transitions = max_depth = 0
        truncated = capped = False

        while queue and not capped:
            world, depth, trail = queue.popleft()
            successors = self.moves(world)
            if depth >= cfg.depth:
                truncated = truncated or bool(successors)
                continue
            for move in successors:
                transitions += 1
                if transitions % PROGRESS_EVERY == 0:
                    logger.info(
                        "explorer.progress", transitions=transitions, visited=len(visited), depth=depth, queued=len(queue)
                    )
                successor, failure = self.apply(world, move)
                if failure is not None:
                    path = _unwind((move, trail))
                    return self._counterexample(
                        path, failure, len(visited), transitions, max(max_depth, len(path)), len(queue)
                    )
                key = self._key(successor)
                if key in visited:
                    continue
                if len(visited) >= cfg.max_states:
                    capped = True
                    break
                visited.add(key)
                max_depth = max(max_depth, depth + 1)
                queue.append((successor, depth + 1, (move, trail)))

        status = "inconclusive" if truncated or capped else "ok"
        result = ExploreResult(status, len(visited), transitions, max_depth, len(queue), truncated, capped, None, [])
        logger.info("explorer.end", **result.summary())
        return result

    def replay(self, path: List[Move]) -> Trace:
        """Re-run a path from the initial state, recording a full trace."""
        recorder = TraceRecorder(self.cfg.n)
        recorder.start(self.cfg.algorithm, self.cfg.mutations)
        world = self.initial()
        for move in path:
            recorder.tick_clock()
            world, failure = self.apply(world, move, recorder)
            if failure is not None:
                break
        return recorder.trace

    def _counterexample(
        self, path: List[Move], failure: Failure, visited: int, transitions: int, max_depth: int, frontier: int
    ) -> ExploreResult:
        trace = self.replay(path)
        violations = check_all(trace, self.cfg.algorithm)
        if not violations:
            kind, description = failure
            violations = [Violation(kind=kind, witnesses=[len(trace) - 1], description=description)]
        result = ExploreResult(
            "counterexample", visited, transitions, max_depth, frontier, False, False, trace, violations
        )
        logger.info("explorer.end", path_length=len(path), **result.summary())
        return result


def _unwind(trail: Trail) -> List[Move]:
    path: List[Move] = []
    while trail is not None:
        move, trail = trail
        path.append(move)
    path.reverse()
    return path


def explore(cfg: SmallConfig) -> ExploreResult:
    return Explorer(cfg).explore()
