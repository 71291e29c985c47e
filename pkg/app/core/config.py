"""
Scenario configuration.

Scenario documents are YAML files validated by the pydantic models below.
Unknown keys are rejected, and ``${VAR}`` values are filled in from the
environment before validation.
"""

import os
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.consensus.mutations import Mutation

ENV_PATTERN = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")
LINK_PATTERN = re.compile(r"^\s*(\d+)\s*->\s*(\d+)\s*$")


class ConfigError(ValueError):
    """A scenario document could not be read or failed validation."""


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ClusterConfig(StrictModel):
    """Cluster membership: servers are numbered 0..n-1."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(..., ge=1, description="Number of servers")

    @property
    def ids(self) -> range:
        return range(self.n)

    @property
    def majority(self) -> int:
        return self.n // 2 + 1


class DelayModel(StrictModel):
    """Message delay in ticks: either a constant or a uniform integer range."""

    fixed: Optional[int] = Field(None, ge=0, description="Constant delay")
    uniform: Optional[Tuple[int, int]] = Field(None, description="Inclusive [lo, hi] range")

    @model_validator(mode="after")
    def _exactly_one(self) -> "DelayModel":
        if (self.fixed is None) == (self.uniform is None):
            raise ValueError("delay needs exactly one of 'fixed' or 'uniform'")
        if self.uniform is not None:
            lo, hi = self.uniform
            if lo < 0 or hi < lo:
                raise ValueError(f"uniform delay range [{lo}, {hi}] is invalid")
        return self


class TimeoutConfig(StrictModel):
    election_base: int = Field(150, ge=1, description="Minimum election timeout")
    election_spread: int = Field(150, ge=0, description="Raft randomized spread added to the base")
    paxos_election_spread: int = Field(0, ge=0, description="Paxos spread; fixed timeouts by default")
    heartbeat_interval: int = Field(50, ge=1, description="Leader heartbeat period")

    @model_validator(mode="after")
    def _heartbeat_below_election(self) -> "TimeoutConfig":
        if self.heartbeat_interval >= self.election_base:
            raise ValueError(
                f"heartbeat_interval ({self.heartbeat_interval}) must be below "
                f"election_base ({self.election_base})"
            )
        return self

    def spread_for(self, algorithm: str) -> int:
        return self.paxos_election_spread if algorithm == "paxos" else self.election_spread


FaultKind = Literal["crash", "restart", "partition", "heal", "crash_leader", "restart_all"]


class FaultSpec(StrictModel):
    at: int = Field(..., ge=0, description="Virtual time of the fault")
    kind: FaultKind = Field(..., description="Fault type")
    server: Optional[int] = Field(None, ge=0, description="Target of crash/restart")
    groups: Optional[List[List[int]]] = Field(None, description="Partition groups")

    @model_validator(mode="after")
    def _arguments(self) -> "FaultSpec":
        if self.kind in ("crash", "restart") and self.server is None:
            raise ValueError(f"{self.kind} fault needs 'server'")
        if self.kind == "partition" and not self.groups:
            raise ValueError("partition fault needs 'groups'")
        return self


class ClientOp(StrictModel):
    at: int = Field(..., ge=0, description="Submission time")
    op: str = Field(..., min_length=1, description="Operation name, unique in the workload")


class OpGenerator(StrictModel):
    """Rate-based workload: ``count`` ops named c1, c2, ... every ``interval`` ticks."""

    start: int = Field(0, ge=0)
    interval: int = Field(10, ge=1)
    count: int = Field(..., ge=0)
    jitter: int = Field(0, ge=0, description="Uniform extra delay per op, seeded")


class WorkloadSpec(StrictModel):
    ops: List[ClientOp] = Field(default_factory=list)
    generator: Optional[OpGenerator] = None


class ScenarioFile(StrictModel):
    """A scenario document as written on disk; ``algorithm: both`` marks a comparison."""

    algorithm: Literal["paxos", "raft", "both"] = Field(..., description="Algorithm under test")
    n: int = Field(3, ge=1, description="Cluster size")
    seed: int = Field(0, ge=0, lt=2**64, description="Root seed")
    duration: int = Field(1000, ge=1, description="Virtual time to simulate")
    delay: DelayModel = Field(default_factory=lambda: DelayModel(fixed=5))
    link_delays: Dict[str, DelayModel] = Field(
        default_factory=dict, description="Per-link overrides keyed 'a->b'"
    )
    timeouts: TimeoutConfig = Field(default_factory=TimeoutConfig)
    faults: List[FaultSpec] = Field(default_factory=list)
    workload: WorkloadSpec = Field(default_factory=WorkloadSpec)
    batch_cap: Optional[int] = Field(None, ge=1, description="Max entries per AppendEntries")
    client_retry_interval: int = Field(20, ge=1, description="Client back-off when no server accepts")
    mutations: List[Mutation] = Field(default_factory=list)

    @property
    def cluster(self) -> ClusterConfig:
        return ClusterConfig(n=self.n)

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioFile":
        ids = set(range(self.n))
        for fault in self.faults:
            if fault.at > self.duration:
                raise ValueError(f"fault at {fault.at} is beyond duration {self.duration}")
            if fault.server is not None and fault.server not in ids:
                raise ValueError(f"fault server {fault.server} is not in 0..{self.n - 1}")
            if fault.groups is not None:
                members = [s for group in fault.groups for s in group]
                if sorted(members) != sorted(ids):
                    raise ValueError(f"partition groups {fault.groups} must cover each server exactly once")
        for key in self.link_delays:
            self.parse_link(key)
        names = [op.op for op in self.workload.ops]
        if len(names) != len(set(names)):
            raise ValueError("workload op names must be unique")
        for op in self.workload.ops:
            if op.at > self.duration:
                raise ValueError(f"op {op.op!r} at {op.at} is beyond duration {self.duration}")
        return self

    def parse_link(self, key: str) -> Tuple[int, int]:
        match = LINK_PATTERN.match(key)
        if not match:
            raise ValueError(f"link key {key!r} must look like 'a->b'")
        src, dst = int(match.group(1)), int(match.group(2))
        if src >= self.n or dst >= self.n or src == dst:
            raise ValueError(f"link {key!r} does not join two distinct servers")
        return src, dst

    def algorithms(self) -> List[str]:
        return ["paxos", "raft"] if self.algorithm == "both" else [self.algorithm]

    def scenario(
        self,
        algorithm: Optional[str] = None,
        seed: Optional[int] = None,
        duration: Optional[int] = None,
        mutations: Optional[List[str]] = None,
    ) -> "Scenario":
        """Resolve to a runnable Scenario; explicit arguments shadow file values."""
        data = self.model_dump()
        if algorithm is not None:
            data["algorithm"] = algorithm
        if seed is not None:
            data["seed"] = seed
        if duration is not None:
            data["duration"] = duration
        if mutations is not None:
            data["mutations"] = mutations
        return build(Scenario, data)


class Scenario(ScenarioFile):
    """A single-algorithm scenario the simulator can run."""

    algorithm: Literal["paxos", "raft"] = Field(..., description="Algorithm under test")

    @model_validator(mode="after")
    def _mutations_match(self) -> "Scenario":
        for mutation in self.mutations:
            if mutation.algorithm != self.algorithm:
                raise ValueError(f"mutation {mutation.value!r} does not apply to {self.algorithm}")
        return self

    def delay_for(self, src: int, dst: int) -> DelayModel:
        return self.link_delays.get(f"{src}->{dst}", self.delay)


def replace_env_vars(obj: Any) -> Any:
    """Substitute ``${VAR}`` string values from the environment, recursively."""
    if isinstance(obj, str):
        match = ENV_PATTERN.match(obj)
        if match:
            value = os.getenv(match.group(1))
            if value is None:
                raise ConfigError(f"Environment variable {match.group(1)} not set")
            return value
        return obj
    if isinstance(obj, dict):
        return {k: replace_env_vars(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [replace_env_vars(item) for item in obj]
    return obj


def _describe(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        where = ".".join(str(part) for part in item["loc"]) or "<document>"
        lines.append(f"{where}: {item['msg']}")
    return "; ".join(lines)


def build(model: type, data: Dict[str, Any]) -> Any:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e


def parse_scenario_file(text: str) -> ScenarioFile:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("Scenario document must be a mapping")
    return build(ScenarioFile, replace_env_vars(raw))


def load_scenario_file(path: Union[str, Path]) -> ScenarioFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read scenario {path}: {e}") from e
    return parse_scenario_file(text)
