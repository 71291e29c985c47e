"""
Seeded random streams.

Each consumer (a server's election timer, a link's delays, the workload
jitter) draws from its own stream derived from the root seed and a path, so
extra draws in one stream never shift the values seen by another.
"""

import hashlib
from typing import Any, Dict, Tuple

import numpy as np

from app.core.config import DelayModel, TimeoutConfig


def derive_seed(seed: int, *path: Any) -> int:
    material = "/".join([f"{seed:016x}", *(str(part) for part in path)])
    return int.from_bytes(hashlib.sha256(material.encode()).digest()[:8], "big")


class RandomStreams:
    """Lazily created numpy generators keyed by path."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: Dict[Tuple[str, ...], np.random.Generator] = {}

    def stream(self, *path: Any) -> np.random.Generator:
        key = tuple(str(part) for part in path)
        if key not in self._streams:
            self._streams[key] = np.random.default_rng(derive_seed(self.seed, *key))
        return self._streams[key]


def uniform_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    if lo == hi:
        return lo
    return int(rng.integers(lo, hi, endpoint=True))


def sample_delay(rng: np.random.Generator, model: DelayModel) -> int:
    if model.fixed is not None:
        return model.fixed
    lo, hi = model.uniform
    return uniform_int(rng, lo, hi)


def sample_timeout(rng: np.random.Generator, timeouts: TimeoutConfig, algorithm: str) -> int:
    """Election timeout: base plus a uniform draw from [0, spread]."""
    spread = timeouts.spread_for(algorithm)
    return timeouts.election_base + uniform_int(rng, 0, spread)
