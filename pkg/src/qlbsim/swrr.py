"""Smooth Weighted Round Robin selection.

The NGINX-style smoothing: every pick adds each instance's effective weight to
its running counter, chooses the largest counter, then subtracts the total
weight from the winner. Over a full cycle of sum(effective) picks each
instance is chosen exactly effective-weight times, without the bursts plain
weighted round robin produces.
"""

from __future__ import annotations

import math

from .core import InstanceId


class SwrrState:
    """Quantized weights plus the per-instance smoothing counters."""

    __slots__ = ("effective", "current", "_total")

    def __init__(self, effective: dict[InstanceId, int]):
        self.effective = effective
        self.current = {m: 0 for m in effective}
        self._total = sum(effective.values())

    @property
    def total_weight(self) -> int:
        return self._total

    def cycle_length(self) -> int:
        return self._total


def rebuild(weights: dict[InstanceId, float], resolution: int = 1000) -> SwrrState:
    """Quantize real-valued routing weights into SWRR integer weights.

    Any instance with positive real weight keeps effective weight >= 1 so
    quantization can never silently drop a pool member. Counters start at 0.
    """
    if not weights:
        raise ValueError("cannot build SWRR state from an empty weight vector")
    if resolution < len(weights):
        raise ValueError("resolution must be at least the number of instances")
    effective: dict[InstanceId, int] = {}
    for m in sorted(weights):
        w = weights[m]
        if w < 0:
            raise ValueError(f"negative weight for instance {m}")
        e = math.floor(w * resolution + 0.5)
        if w > 0 and e == 0:
            e = 1
        effective[m] = e
    return SwrrState(effective)


def select(state: SwrrState) -> InstanceId:
    """Pick the next instance; ties go to the lowest instance id."""
    if state._total <= 0:
        raise ValueError("all SWRR weights are zero")
    current = state.current
    best: InstanceId | None = None
    best_w = -math.inf
    for m, e in state.effective.items():
        c = current[m] + e
        current[m] = c
        if c > best_w or (c == best_w and m < best):  # type: ignore[operator]
            best = m
            best_w = c
    assert best is not None
    current[best] -= state._total
    return best
