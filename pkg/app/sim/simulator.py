"""
Deterministic discrete-event simulator.

Virtual time is integer ticks. Pending work sits in a heap ordered by
(time, scheduling sequence number), so a scenario and its seed fully
determine the trace. Channels are reliable and FIFO per directed link;
messages are lost only across a partition or when the receiver crashed.
"""

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional, Tuple

from app.consensus.registry import get_algorithm
from app.consensus.types import (
    AppendEntriesReq,
    AppendEntriesResp,
    Apply,
    Broadcast,
    ClientRequest,
    Deliver,
    Effect,
    InternalFault,
    Message,
    NodeState,
    NotLeader,
    Persist,
    PersistentState,
    ResetTimer,
    Restart,
    Role,
    RoleChange,
    Send,
    ServerId,
    TimerFire,
    TimerKind,
    log_payload,
)
from app.core.config import FaultSpec, Scenario
from app.core.observability import get_logger, log_error
from app.sim.measure import RunMetrics, collect_metrics
from app.sim.rng import RandomStreams, sample_delay, sample_timeout, uniform_int
from app.sim.trace import EventKind, Trace, prefix_digest

logger = get_logger(__name__)


class SimulationAborted(Exception):
    """An InternalFault stopped the run; the partial trace is attached."""

    def __init__(self, message: str, trace: Trace):
        super().__init__(message)
        self.trace = trace


@dataclass(order=True)
class _Pending:
    time: int
    seq: int
    action: str = field(compare=False)
    data: Tuple[Any, ...] = field(compare=False, default=())


def append_entries_details(state: NodeState, req: AppendEntriesReq, effects: List[Effect]) -> Dict[str, Any]:
    """What an AppendEntries found at its receiver, for the DeliverMsg record.

    ``state`` is the receiver before handling, ``effects`` what handling produced.
    """
    identical = rewritten = 0
    for offset, entry in enumerate(req.entries):
        index = req.prev_log_index + offset + 1
        if index > len(state.log):
            break
        held = state.log[index - 1]
        if held == entry:
            identical += 1
        elif held.operation == entry.operation:
            rewritten += 1
    accepted = any(
        isinstance(e, Send) and isinstance(e.message, AppendEntriesResp) and e.message.success
        for e in effects
    )
    follower_prefix = (
        prefix_digest(state.log, req.prev_log_index) if req.prev_log_index <= len(state.log) else None
    )
    return {
        "follower_prefix": follower_prefix,
        "accepted": accepted,
        "held_identical": identical,
        "held_rewritten": rewritten,
    }


class Simulator:
    """Runs one scenario to completion."""

    def __init__(self, scenario: Scenario, strict: bool = False):
        self.scenario = scenario
        self.strict = strict
        self.cluster = scenario.cluster
        self.algorithm = get_algorithm(
            scenario.algorithm, self.cluster, scenario.mutations, scenario.batch_cap
        )
        self.streams = RandomStreams(scenario.seed)
        self.trace = Trace()
        self.now = 0
        self.aborted = False

        ids = list(self.cluster.ids)
        self.states: Dict[ServerId, Optional[NodeState]] = {s: self.algorithm.initial_state(s) for s in ids}
        self.disk: Dict[ServerId, PersistentState] = {s: PersistentState(server_id=s) for s in ids}
        self.incarnation: Dict[ServerId, int] = {s: 0 for s in ids}
        self.timer_gen: Dict[Tuple[ServerId, TimerKind], int] = {
            (s, kind): 0 for s in ids for kind in TimerKind
        }
        self.link_clock: Dict[Tuple[ServerId, ServerId], int] = {}
        self.partition: Optional[Dict[ServerId, int]] = None

        self._queue: List[_Pending] = []
        self._sched_seq = 0
        self._msg_seq = 0
        self._pending_ops: Deque[str] = deque()
        self._retry_scheduled = False
        self._client_cursor = 0

    # scheduling

    def _schedule(self, time: int, action: str, *data: Any) -> None:
        heapq.heappush(self._queue, _Pending(time, self._sched_seq, action, data))
        self._sched_seq += 1

    def _arm_timer(self, server: ServerId, kind: TimerKind) -> None:
        key = (server, kind)
        self.timer_gen[key] += 1
        if kind is TimerKind.ELECTION:
            delay = sample_timeout(
                self.streams.stream("timeout", server), self.scenario.timeouts, self.scenario.algorithm
            )
        else:
            delay = self.scenario.timeouts.heartbeat_interval
        self._schedule(self.now + delay, "timer", server, kind, self.timer_gen[key])

    def _bootstrap(self) -> None:
        scenario = self.scenario
        self.trace.record(
            0,
            EventKind.RUN_START,
            algorithm=scenario.algorithm,
            n=self.cluster.n,
            seed=scenario.seed,
            mutations=sorted(m.value for m in scenario.mutations),
        )
        for server in self.cluster.ids:
            self._arm_timer(server, TimerKind.ELECTION)
        for fault in scenario.faults:
            self._schedule(fault.at, "fault", fault)
        ops = [(op.at, op.op) for op in scenario.workload.ops]
        generator = scenario.workload.generator
        if generator is not None:
            jitter = self.streams.stream("workload")
            for k in range(generator.count):
                at = generator.start + k * generator.interval + uniform_int(jitter, 0, generator.jitter)
                if at <= scenario.duration:
                    ops.append((at, f"c{k + 1}"))
        for at, op in sorted(ops):
            self._schedule(at, "client", op)

    def run(self) -> Trace:
        self._bootstrap()
        logger.info(
            "simulation.start",
            algorithm=self.scenario.algorithm,
            n=self.cluster.n,
            seed=self.scenario.seed,
            duration=self.scenario.duration,
        )
        while self._queue and not self.aborted:
            if self._queue[0].time > self.scenario.duration:
                break
            pending = heapq.heappop(self._queue)
            self.now = pending.time
            getattr(self, f"_on_{pending.action}")(*pending.data)
        logger.info("simulation.end", events=len(self.trace), aborted=self.aborted, time=self.now)
        return self.trace

    # stepping a node

    def _up(self, server: ServerId) -> bool:
        return self.states[server] is not None

    def _step(self, server: ServerId, inp: Any) -> bool:
        """Feed one input to a live server and carry out its effects."""
        try:
            state, effects = self.algorithm.step(self.states[server], inp)
        except InternalFault as fault:
            self._fault(server, fault)
            return False
        self.states[server] = state
        self._carry_out(server, effects)
        return True

    def _fault(self, server: ServerId, fault: InternalFault) -> None:
        self.trace.record(self.now, EventKind.INTERNAL_FAULT, server=server, error=str(fault))
        self.aborted = True
        log_error(logger, fault, {"server": server, "time": self.now})
        if self.strict:
            raise SimulationAborted(str(fault), self.trace) from fault

    def _carry_out(self, server: ServerId, effects: List[Effect]) -> None:
        state = self.states[server]
        for effect in effects:
            if isinstance(effect, Persist):
                persisted = state.persistent()
                self.disk[server] = persisted
                self.trace.record(self.now, EventKind.PERSIST_WRITE, **persisted.to_payload())
            elif isinstance(effect, Send):
                self._send(server, effect.to, effect.message)
            elif isinstance(effect, Broadcast):
                for peer in self.cluster.ids:
                    if peer != server:
                        self._send(server, peer, effect.message)
            elif isinstance(effect, Apply):
                self.trace.record(
                    self.now,
                    EventKind.APPLY_OP,
                    server=server,
                    index=effect.index,
                    op=effect.operation,
                    term=effect.term,
                    leader_term=state.current_term if state.role is Role.LEADER else None,
                )
            elif isinstance(effect, RoleChange):
                payload: Dict[str, Any] = {
                    "server": server,
                    "role": effect.role.value,
                    "term": effect.term,
                    "commit_index": state.commit_index,
                }
                if effect.role is Role.LEADER:
                    payload["log"] = log_payload(state.log)
                    self._arm_timer(server, TimerKind.HEARTBEAT)
                self.trace.record(self.now, EventKind.ROLE_CHANGE, **payload)
            elif isinstance(effect, ResetTimer):
                self._arm_timer(server, effect.timer)

    # network

    def _partitioned(self, src: ServerId, dst: ServerId) -> bool:
        return self.partition is not None and self.partition[src] != self.partition[dst]

    def _send(self, src: ServerId, dst: ServerId, message: Message) -> None:
        msg_id = self._msg_seq
        self._msg_seq += 1
        payload: Dict[str, Any] = {"src": src, "dst": dst, "msg_id": msg_id, "msg": message.to_payload()}
        if isinstance(message, AppendEntriesReq):
            payload["leader_prefix"] = prefix_digest(self.states[src].log, message.prev_log_index)
        self.trace.record(self.now, EventKind.SEND_MSG, **payload)

        if self._partitioned(src, dst):
            self._drop(src, dst, msg_id, message, "partition")
            return
        delay = sample_delay(self.streams.stream("delay", src, dst), self.scenario.delay_for(src, dst))
        at = max(self.now + delay, self.link_clock.get((src, dst), 0))
        self.link_clock[(src, dst)] = at
        self._schedule(at, "deliver", src, dst, msg_id, message, self.incarnation[dst])

    def _drop(self, src: ServerId, dst: ServerId, msg_id: int, message: Message, reason: str) -> None:
        self.trace.record(
            self.now,
            EventKind.DROP_MSG,
            src=src,
            dst=dst,
            msg_id=msg_id,
            msg=message.to_payload(),
            reason=reason,
        )

    def _on_deliver(self, src: ServerId, dst: ServerId, msg_id: int, message: Message, incarnation: int) -> None:
        if not self._up(dst) or self.incarnation[dst] != incarnation:
            self._drop(src, dst, msg_id, message, "crashed")
            return
        if self._partitioned(src, dst):
            self._drop(src, dst, msg_id, message, "partition")
            return

        state = self.states[dst]
        payload: Dict[str, Any] = {"src": src, "dst": dst, "msg_id": msg_id, "msg": message.to_payload()}
        try:
            new_state, effects = self.algorithm.step(state, Deliver(src, message))
        except InternalFault as fault:
            self.trace.record(self.now, EventKind.DELIVER_MSG, **payload)
            self._fault(dst, fault)
            return

        if isinstance(message, AppendEntriesReq):
            payload.update(append_entries_details(state, message, effects))
        self.trace.record(self.now, EventKind.DELIVER_MSG, **payload)
        self.states[dst] = new_state
        self._carry_out(dst, effects)

    # timers

    def _on_timer(self, server: ServerId, kind: TimerKind, generation: int) -> None:
        if not self._up(server) or self.timer_gen[(server, kind)] != generation:
            return
        role = self.states[server].role
        if kind is TimerKind.ELECTION and role is Role.LEADER:
            # keep an election timer running so a deposed leader still times out
            self._arm_timer(server, TimerKind.ELECTION)
            return
        if kind is TimerKind.HEARTBEAT and role is not Role.LEADER:
            return
        self.trace.record(self.now, EventKind.TIMER_FIRE, server=server, timer=kind.value)
        self._step(server, TimerFire(kind))

    # clients

    def _on_client(self, op: str) -> None:
        self._pending_ops.append(op)
        self._offer_ops()

    def _on_retry(self) -> None:
        self._retry_scheduled = False
        self._offer_ops()

    def _offer_ops(self) -> None:
        n = self.cluster.n
        while self._pending_ops and not self.aborted:
            op = self._pending_ops[0]
            accepted = False
            for k in range(n):
                server = (self._client_cursor + k) % n
                if not self._up(server):
                    continue
                try:
                    state, effects = self.algorithm.step(self.states[server], ClientRequest(op))
                except NotLeader:
                    self.trace.record(self.now, EventKind.NOT_LEADER_REJECT, server=server, op=op)
                    continue
                except InternalFault as fault:
                    self._fault(server, fault)
                    return
                self.trace.record(self.now, EventKind.CLIENT_SUBMIT, server=server, op=op, index=len(state.log))
                self.states[server] = state
                self._client_cursor = server
                self._carry_out(server, effects)
                accepted = True
                break
            if not accepted:
                if not self._retry_scheduled:
                    self._retry_scheduled = True
                    self._schedule(self.now + self.scenario.client_retry_interval, "retry")
                return
            self._pending_ops.popleft()

    # faults

    def current_leader(self) -> Optional[ServerId]:
        """Live leader with the highest term, if any."""
        leaders = [
            (state.current_term, server)
            for server, state in self.states.items()
            if state is not None and state.role is Role.LEADER
        ]
        return max(leaders)[1] if leaders else None

    def _on_fault(self, fault: FaultSpec) -> None:
        logger.debug("simulation.fault", kind=fault.kind, time=self.now, server=fault.server)
        if fault.kind == "crash":
            self._crash(fault.server)
        elif fault.kind == "crash_leader":
            leader = self.current_leader()
            if leader is not None:
                self._crash(leader)
        elif fault.kind == "restart":
            self._restart(fault.server)
        elif fault.kind == "restart_all":
            for server in self.cluster.ids:
                self._restart(server)
        elif fault.kind == "partition":
            self.partition = {
                server: group_no for group_no, group in enumerate(fault.groups) for server in group
            }
            self.trace.record(self.now, EventKind.PARTITION_SET, groups=[sorted(g) for g in fault.groups])
        elif fault.kind == "heal":
            self.partition = None
            self.trace.record(self.now, EventKind.HEAL)

    def _crash(self, server: ServerId) -> None:
        state = self.states[server]
        if state is None:
            return
        self.trace.record(
            self.now,
            EventKind.CRASH,
            server=server,
            was_leader=state.role is Role.LEADER,
            term=state.current_term,
        )
        self.states[server] = None
        self.incarnation[server] += 1
        for kind in TimerKind:
            self.timer_gen[(server, kind)] += 1

    def _restart(self, server: ServerId) -> None:
        if self._up(server):
            return
        persisted = self.disk[server]
        self.trace.record(self.now, EventKind.RESTART, **persisted.to_payload())
        self.states[server] = NodeState.recover(persisted)
        self._step(server, Restart())


def run(scenario: Scenario, strict: bool = False) -> Tuple[Trace, RunMetrics]:
    """Simulate a scenario and measure the resulting trace."""
    simulator = Simulator(scenario, strict=strict)
    trace = simulator.run()
    return trace, collect_metrics(trace)
