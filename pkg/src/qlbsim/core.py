"""Shared domain types and the elementary latency/reward formulas.

All engine-internal times are milliseconds held in 64-bit floats; evaluation
windows are configured in seconds and converted once at the boundary.
Identifiers (nodes, instances, load balancers, clients) are small opaque
non-negative ints, with one load balancer per node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

NodeId = int
InstanceId = int
LbId = int
ClientId = int

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class QosRequirements:
    """Latency target: at least `rho` of requests within `tau_ms`, judged over a sliding `window_s`."""

    tau_ms: float
    rho: float
    window_s: float

    def __post_init__(self) -> None:
        if self.tau_ms <= 0:
            raise ValueError("tau_ms must be positive")
        if not (0.0 < self.rho <= 1.0):
            raise ValueError("rho must be in (0, 1]")
        if self.window_s <= 0:
            raise ValueError("window_s must be positive")

    @property
    def window_ms(self) -> float:
        return self.window_s * 1000.0


class Topology:
    """Symmetric node-to-node round-trip latency matrix; the network ground truth."""

    def __init__(self, rtt_ms: Sequence[Sequence[float]]):
        n = len(rtt_ms)
        matrix = [list(map(float, row)) for row in rtt_ms]
        for i, row in enumerate(matrix):
            if len(row) != n:
                raise ValueError("rtt matrix must be square")
            if row[i] != 0.0:
                raise ValueError(f"rtt_ms[{i}][{i}] must be 0")
            for j in range(n):
                if row[j] < 0:
                    raise ValueError("rtt entries must be non-negative")
                if abs(row[j] - matrix[j][i]) > 1e-9:
                    raise ValueError(f"rtt matrix must be symmetric at ({i},{j})")
        self.n_nodes = n
        self.rtt_ms = matrix

    def rtt(self, a: NodeId, b: NodeId) -> float:
        return self.rtt_ms[a][b]


@dataclass(slots=True)
class RequestRecord:
    """One routed request's full trace; the unit every metric is computed from.

    `instance` is None when no instance existed to route to; such records carry
    infinite latencies and success=False, preserving total = net + proc.
    """

    client: ClientId
    lb: LbId
    instance: Optional[InstanceId]
    send_time_ms: float
    net_ms: float
    proc_ms: float
    total_ms: float
    success: bool


@dataclass(frozen=True)
class PlacementEvent:
    kind: str  # "added" | "removed"
    instance: InstanceId
    node: NodeId
    time_ms: float


def end_to_end_latency(net_ms: float, proc_ms: float) -> float:
    """Total request latency: network round trip plus processing (queueing + execution)."""
    if net_ms < 0 or proc_ms < 0:
        raise ValueError("latencies must be non-negative")
    return net_ms + proc_ms


def reward(total_ms: float, tau_ms: float) -> int:
    """Binary QoS success: 1 iff the request met the latency target (boundary counts as success)."""
    return 1 if total_ms <= tau_ms else 0


def validate_weights(weights: dict[InstanceId, float]) -> None:
    """Check the weight-vector invariant: non-negative entries summing to 1 when non-empty."""
    if not weights:
        return
    total = 0.0
    for m, w in weights.items():
        if w < 0:
            raise ValueError(f"negative weight for instance {m}")
        total += w
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"weights sum to {total}, expected 1")


def normalize_weights(weights: dict[InstanceId, float]) -> dict[InstanceId, float]:
    """Proportionally rescale weights to sum to 1; empty or all-zero input maps to {}."""
    total = sum(weights.values())
    if total <= 0.0:
        return {}
    return {m: w / total for m, w in weights.items()}


def aggregate_instance_rate(
    weights_per_lb: dict[LbId, dict[InstanceId, float]],
    rates_per_lb: dict[LbId, float],
    instance: InstanceId,
) -> float:
    """Aggregate arrival rate at one instance: sum over LBs of weight times LB rate."""
    return sum(
        weights_per_lb[k].get(instance, 0.0) * rates_per_lb[k] for k in weights_per_lb
    )


def windowed_success_ratio(
    records: Iterable[RequestRecord], now_ms: float, window_s: float
) -> Optional[float]:
    """Success fraction of requests sent in [now - W, now); None when the window holds none.

    The undefined (None) case is deliberately distinct from 0 and 1 so callers
    choose their own policy for empty windows.
    """
    lo = now_ms - window_s * 1000.0
    n = 0
    good = 0
    for r in records:
        if lo <= r.send_time_ms < now_ms:
            n += 1
            good += r.success
    if n == 0:
        return None
    return good / n
