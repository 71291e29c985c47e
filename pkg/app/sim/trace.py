"""
Run traces.

A trace is the totally ordered list of everything that happened in a run,
ordered by (time, seq). It serializes to newline-delimited JSON with the
fields of every record in the order time, seq, kind, payload.

Payload fields by kind:

    RunStart         algorithm, n, seed, mutations
    SendMsg          src, dst, msg_id, msg (+ leader_prefix for AppendEntries)
    DeliverMsg       src, dst, msg_id, msg (+ follower_prefix, accepted,
                     held_identical, held_rewritten for AppendEntries)
    DropMsg          src, dst, msg_id, msg, reason
    TimerFire        server, timer
    RoleChange       server, role, term, commit_index (+ log for leaders)
    PersistWrite     server, term, voted_for, log
    ApplyOp          server, index, op, term, leader_term
    Crash            server, was_leader, term
    Restart          server, term, voted_for, log
    ClientSubmit     server, op, index
    NotLeaderReject  server, op
    PartitionSet     groups
    Heal             (empty)
    InternalFault    server, error
"""

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union

from app.consensus.types import Log, log_payload


class EventKind(str, Enum):
    RUN_START = "RunStart"
    SEND_MSG = "SendMsg"
    DELIVER_MSG = "DeliverMsg"
    DROP_MSG = "DropMsg"
    TIMER_FIRE = "TimerFire"
    ROLE_CHANGE = "RoleChange"
    PERSIST_WRITE = "PersistWrite"
    APPLY_OP = "ApplyOp"
    CRASH = "Crash"
    RESTART = "Restart"
    CLIENT_SUBMIT = "ClientSubmit"
    NOT_LEADER_REJECT = "NotLeaderReject"
    PARTITION_SET = "PartitionSet"
    HEAL = "Heal"
    INTERNAL_FAULT = "InternalFault"


@dataclass(frozen=True)
class TraceEvent:
    time: int
    seq: int
    kind: EventKind
    payload: Dict[str, Any]

    def to_json(self) -> str:
        record = {"time": self.time, "seq": self.seq, "kind": self.kind.value, "payload": self.payload}
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        record = json.loads(line)
        return cls(record["time"], record["seq"], EventKind(record["kind"]), record["payload"])


def prefix_digest(log: Log, length: int) -> str:
    """Short digest of log[1..length], used to compare prefixes across servers."""
    data = json.dumps(log_payload(log[:length]), separators=(",", ":"))
    return hashlib.sha256(data.encode()).hexdigest()[:16]


class Trace:
    """Append-only event list with JSON-lines serialization."""

    def __init__(self, events: Optional[Iterable[TraceEvent]] = None):
        self.events: List[TraceEvent] = list(events or [])

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __getitem__(self, seq: int) -> TraceEvent:
        return self.events[seq]

    def record(self, time: int, kind: EventKind, **payload: Any) -> TraceEvent:
        if self.events and time < self.events[-1].time:
            raise ValueError(f"trace time went backwards: {time} < {self.events[-1].time}")
        event = TraceEvent(time, len(self.events), kind, payload)
        self.events.append(event)
        return event

    def of_kind(self, *kinds: EventKind) -> List[TraceEvent]:
        return [event for event in self.events if event.kind in kinds]

    @property
    def algorithm(self) -> Optional[str]:
        starts = self.of_kind(EventKind.RUN_START)
        return starts[0].payload["algorithm"] if starts else None

    @property
    def n(self) -> Optional[int]:
        starts = self.of_kind(EventKind.RUN_START)
        return starts[0].payload["n"] if starts else None

    def to_jsonl(self) -> str:
        return "".join(event.to_json() + "\n" for event in self.events)

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Trace":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(TraceEvent.from_json(line) for line in lines if line.strip())
