from typing import Dict, Iterable, Optional, Type

from app.consensus.base_algorithm import ConsensusAlgorithm
from app.consensus.mutations import Mutation
from app.consensus.paxos import PaxosAlgorithm
from app.consensus.raft import RaftAlgorithm
from app.core.config import ClusterConfig

registry: Dict[str, Type[ConsensusAlgorithm]] = {}


def register_algorithm(algorithm: Type[ConsensusAlgorithm]) -> None:
    if algorithm.name in registry:
        raise ValueError(f"Algorithm {algorithm.name} is already registered")
    registry[algorithm.name] = algorithm


def get_algorithm(
    name: str,
    cluster: ClusterConfig,
    mutations: Iterable[Mutation] = (),
    batch_cap: Optional[int] = None,
) -> ConsensusAlgorithm:
    if name not in registry:
        raise ValueError(f"Algorithm {name} not found")
    return registry[name](cluster, mutations, batch_cap)


def get_all_algorithms() -> Dict[str, Type[ConsensusAlgorithm]]:
    return registry.copy()


register_algorithm(PaxosAlgorithm)
register_algorithm(RaftAlgorithm)
