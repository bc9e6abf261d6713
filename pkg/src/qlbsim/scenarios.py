"""Scenario description: topology, placement, workload, service model, strategy, events.

Topologies are either synthetic (nodes dropped uniformly in a square, RTT =
base + scale * euclidean distance) or loaded from a symmetric latency matrix.
Service placement defaults to greedy k-center on the RTT metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import InstanceId, NodeId, QosRequirements, Topology


@dataclass(frozen=True)
class TopologyParams:
    n_nodes: int = 30
    box: float = 100.0
    ms_per_unit: float = 1.0
    base_ms: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be >= 2")
        if self.box <= 0 or self.ms_per_unit < 0 or self.base_ms < 0:
            raise ValueError("box must be positive; scale and base non-negative")


def generate_topology(params: TopologyParams, rng: Optional[np.random.Generator] = None) -> Topology:
    """Drop nodes uniformly in a square; off-diagonal RTT = base + scale * distance."""
    if rng is None:
        rng = np.random.default_rng(params.seed)
    pts = rng.uniform(0.0, params.box, size=(params.n_nodes, 2))
    n = params.n_nodes
    matrix = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = math.dist(pts[i], pts[j])
            rtt = params.base_ms + params.ms_per_unit * d
            matrix[i][j] = rtt
            matrix[j][i] = rtt
    return Topology(matrix)


def k_center_placement(topology: Topology, k: int, start: NodeId = 0) -> list[NodeId]:
    """Greedy k-center: repeatedly add the node farthest from the chosen centers.

    Ties break toward the lowest node id; the start node seeds the selection.
    Returns centers in selection order (instance ids follow this order).
    """
    n = topology.n_nodes
    if not (1 <= k <= n):
        raise ValueError("k must be in [1, n_nodes]")
    if not (0 <= start < n):
        raise ValueError("start node out of range")
    centers = [start]
    dist = list(topology.rtt_ms[start])
    for _ in range(k - 1):
        far = 0
        far_d = -1.0
        for v in range(n):
            if dist[v] > far_d:
                far = v
                far_d = dist[v]
        centers.append(far)
        row = topology.rtt_ms[far]
        for v in range(n):
            if row[v] < dist[v]:
                dist[v] = row[v]
    return centers


def covering_radius(topology: Topology, centers: list[NodeId]) -> float:
    return max(min(topology.rtt_ms[c][v] for c in centers) for v in range(topology.n_nodes))


@dataclass(frozen=True)
class ServiceTimeModel:
    """Per-instance service duration model; cv=0 degenerates to a constant."""

    family: str = "lognormal"
    mean_ms: float = 6.0
    cv: float = 0.1
    idle_latency_ms: Optional[float] = None  # benchmark value; defaults to the mean

    def __post_init__(self) -> None:
        if self.family not in ("lognormal",):
            raise ValueError(f"unknown service family {self.family!r}")
        if self.mean_ms <= 0 or self.cv < 0:
            raise ValueError("mean_ms must be positive and cv non-negative")

    @property
    def idle_ms(self) -> float:
        return self.mean_ms if self.idle_latency_ms is None else self.idle_latency_ms


@dataclass(frozen=True)
class WorkloadSpec:
    clients_per_lb: int = 4
    rate_per_client: float = 10.0  # requests per second
    phase: str = "spread"          # "spread" | "zero": per-client start offset within a period

    def __post_init__(self) -> None:
        if self.clients_per_lb < 0:
            raise ValueError("clients_per_lb must be >= 0")
        if self.rate_per_client <= 0:
            raise ValueError("rate_per_client must be positive")
        if self.phase not in ("spread", "zero"):
            raise ValueError("phase must be 'spread' or 'zero'")

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.rate_per_client


@dataclass(frozen=True)
class StrategySpec:
    name: str  # "qedgeproxy" | "proxymity" | "dec_sarsa"
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in ("qedgeproxy", "proxymity", "dec_sarsa"):
            raise ValueError(f"unknown strategy {self.name!r}")

    def label(self) -> str:
        if self.name == "proxymity":
            return f"proxymity:{self.params.get('alpha', 1.0)}"
        return self.name


@dataclass(frozen=True)
class EngineParams:
    probe_period_s: float = 5.0
    mc_draws: int = 1000            # Monte-Carlo draws per oracle estimate
    removal_mode: str = "drain"     # "drain": in-flight completes; "fail": in-flight fails
    rtt_jitter: float = 0.0         # per-request multiplicative RTT spread: rtt * U(1-j, 1+j)

    def __post_init__(self) -> None:
        if self.probe_period_s <= 0:
            raise ValueError("probe_period_s must be positive")
        if self.mc_draws < 1:
            raise ValueError("mc_draws must be >= 1")
        if self.removal_mode not in ("drain", "fail"):
            raise ValueError("removal_mode must be 'drain' or 'fail'")
        if not (0.0 <= self.rtt_jitter < 1.0):
            raise ValueError("rtt_jitter must be in [0, 1)")


@dataclass(frozen=True)
class TimedEvent:
    time_s: float
    kind: str  # "add_clients" | "remove_instance" | "add_instance"
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("add_clients", "remove_instance", "add_instance"):
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass
class ScenarioSpec:
    """Everything one simulation run needs, seed included."""

    qos: QosRequirements
    duration_s: float
    seed: int = 0
    topology_params: Optional[TopologyParams] = None
    topology_matrix: Optional[Topology] = None
    placement_k: Optional[int] = 10
    placement_explicit: Optional[list[tuple[InstanceId, NodeId]]] = None
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    service: ServiceTimeModel = field(default_factory=ServiceTimeModel)
    strategy: StrategySpec = field(default_factory=lambda: StrategySpec("qedgeproxy"))
    engine: EngineParams = field(default_factory=EngineParams)
    events: list[TimedEvent] = field(default_factory=list)

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if (self.topology_params is None) == (self.topology_matrix is None):
            raise ValueError("exactly one of topology_params / topology_matrix is required")
        n = (
            self.topology_params.n_nodes
            if self.topology_params is not None
            else self.topology_matrix.n_nodes
        )
        if (self.placement_k is None) == (self.placement_explicit is None):
            raise ValueError("exactly one of placement_k / placement_explicit is required")
        if self.placement_k is not None and not (1 <= self.placement_k <= n):
            raise ValueError("placement k must be in [1, n_nodes]")
        if self.placement_explicit is not None:
            for inst, node in self.placement_explicit:
                if not (0 <= node < n):
                    raise ValueError(f"placement node {node} out of range")
        for ev in self.events:
            if not (0.0 <= ev.time_s <= self.duration_s):
                raise ValueError(f"event at t={ev.time_s}s falls outside [0, duration]")

    def build_topology(self) -> Topology:
        if self.topology_matrix is not None:
            return self.topology_matrix
        return generate_topology(self.topology_params)

    def build_placement(self, topology: Topology) -> dict[InstanceId, NodeId]:
        if self.placement_explicit is not None:
            return {inst: node for inst, node in self.placement_explicit}
        centers = k_center_placement(topology, self.placement_k, start=0)
        return {i: node for i, node in enumerate(centers)}
