"""
Prometheus text export of run metrics.

Every run gets its own CollectorRegistry so repeated runs in one process
never share counters.
"""

from pathlib import Path
from typing import Mapping, Union

from prometheus_client import CollectorRegistry, Gauge, generate_latest, write_to_textfile

PREFIX = "paxraft"


def build_registry(algorithm: str, values: Mapping[str, float]) -> CollectorRegistry:
    """One gauge per scalar metric, labelled with the algorithm."""
    registry = CollectorRegistry()
    for key in sorted(values):
        gauge = Gauge(
            f"{PREFIX}_{key}",
            f"Run metric {key}",
            ["algorithm"],
            registry=registry,
        )
        gauge.labels(algorithm=algorithm).set(values[key])
    return registry


def render_metrics(algorithm: str, values: Mapping[str, float]) -> str:
    return generate_latest(build_registry(algorithm, values)).decode("utf-8")


def write_metrics(path: Union[str, Path], algorithm: str, values: Mapping[str, float]) -> None:
    write_to_textfile(str(path), build_registry(algorithm, values))
