"""Comparison strategies: proximity-blend routing and a differential-SARSA learner.

Both expose the same surface as the pool policy (route / record_outcome /
maintenance / placement callbacks) and, like it, never see another LB's state.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import swrr
from .core import InstanceId, LbId, NodeId, QosRequirements, RequestRecord
from .estimator import ObservationWindow, percentile


@dataclass(frozen=True)
class ProxyMityConfig:
    """alpha=0 spreads evenly over all instances; alpha=1 sends everything to the nearest."""

    alpha: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must be in [0, 1]")


def proxymity_weights(rtts: dict[InstanceId, float], alpha: float) -> dict[InstanceId, float]:
    """Blend of uniform spreading and nearest-instance affinity.

    w_m = (1 - alpha)/M + alpha * [m is the RTT argmin], ties to the lowest id.
    """
    if not rtts:
        raise ValueError("proxymity_weights needs at least one instance")
    nearest = min(rtts, key=lambda m: (rtts[m], m))
    base = (1.0 - alpha) / len(rtts)
    return {m: base + (alpha if m == nearest else 0.0) for m in sorted(rtts)}


class ProxyMityPolicy:
    """Static proximity routing: weights fixed at initialization and on placement changes only."""

    name = "proxymity"

    def __init__(self, lb: LbId, qos: QosRequirements, config: ProxyMityConfig,
                 swrr_resolution: int = 1000):
        self.lb = lb
        self.qos = qos
        self.config = config
        self.swrr_resolution = swrr_resolution
        self.rtt_view: dict[InstanceId, float] = {}
        self.weights: dict[InstanceId, float] = {}
        self._swrr: Optional[swrr.SwrrState] = None
        self.last_diag: dict = {}

    def initialize(self, placement: dict[InstanceId, NodeId], rtts: dict[InstanceId, float]) -> None:
        self.rtt_view = dict(rtts)
        self._recompute()

    def _recompute(self) -> None:
        if not self.rtt_view:
            self.weights = {}
            self._swrr = None
            return
        self.weights = proxymity_weights(self.rtt_view, self.config.alpha)
        positive = {m: w for m, w in self.weights.items() if w > 0}
        self._swrr = swrr.rebuild(positive, self.swrr_resolution) if positive else None

    def maintenance_step(self, now_ms: float) -> None:
        pass

    def route(self, now_ms: float) -> Optional[InstanceId]:
        if self._swrr is None:
            return None
        return swrr.select(self._swrr)

    def record_outcome(self, m: InstanceId, record: RequestRecord, now_ms: float) -> None:
        pass

    def on_probe(self, rtt_view: dict[InstanceId, float], now_ms: float) -> None:
        self.rtt_view = dict(rtt_view)

    def on_instance_added(self, m: InstanceId, node: NodeId, rtt_ms: float, now_ms: float) -> None:
        self.rtt_view[m] = rtt_ms
        self._recompute()

    def on_instance_removed(self, m: InstanceId, now_ms: float) -> None:
        self.rtt_view.pop(m, None)
        self._recompute()

    def routing_distribution(self) -> dict[InstanceId, float]:
        return dict(self.weights)


@dataclass(frozen=True)
class SarsaConfig:
    learning_rate: float = 0.1     # alpha_lr
    avg_step: float = 0.01         # beta for the average-reward baseline
    explore_rate: float = 0.1
    explore_decay: float = 0.999   # multiplicative, per request
    explore_floor: float = 0.01
    buckets: int = 5               # state buckets over the recent success ratio

    def __post_init__(self) -> None:
        if not (0.0 < self.learning_rate < 1.0):
            raise ValueError("learning_rate must be in (0, 1)")
        if not (0.0 <= self.explore_rate <= 1.0):
            raise ValueError("explore_rate must be in [0, 1]")
        if self.buckets < 1:
            raise ValueError("buckets must be >= 1")


class SarsaState:
    """Q table over (success-ratio bucket, instance) plus the differential average reward."""

    __slots__ = ("q_table", "avg_reward", "config", "explore_rate")

    def __init__(self, config: SarsaConfig):
        self.config = config
        self.q_table: dict[tuple[int, InstanceId], float] = {}
        self.avg_reward = 0.0
        self.explore_rate = config.explore_rate

    def q(self, s: int, a: InstanceId) -> float:
        return self.q_table.get((s, a), 0.0)


def bucket_of(ratio: Optional[float], buckets: int) -> int:
    """Map a windowed success ratio to a state bucket; an undefined ratio maps to bucket 0."""
    if ratio is None:
        return 0
    return min(int(ratio * buckets), buckets - 1)


def sarsa_select(
    state: SarsaState, s: int, feasible: set[InstanceId], rng: np.random.Generator
) -> InstanceId:
    """Epsilon-greedy over the bucket's Q row; exploitation ties go to the lowest id."""
    if not feasible:
        raise ValueError("sarsa_select needs a non-empty feasible set")
    ordered = sorted(feasible)
    if state.explore_rate > 0 and rng.random() < state.explore_rate:
        return ordered[int(rng.integers(len(ordered)))]
    return max(ordered, key=lambda m: (state.q(s, m), -m))


def sarsa_update(
    state: SarsaState, s: int, a: InstanceId, r: float, s_next: int, a_next: InstanceId
) -> None:
    """Differential on-policy update: Q += lr*(r - avg + Q(s',a') - Q(s,a)); avg += beta*(r - avg)."""
    cfg = state.config
    q_sa = state.q(s, a)
    td = r - state.avg_reward + state.q(s_next, a_next) - q_sa
    state.q_table[(s, a)] = q_sa + cfg.learning_rate * td
    state.avg_reward += cfg.avg_step * (r - state.avg_reward)


class DecSarsaPolicy:
    """Per-request RL routing: each LB learns instance values from its own deadline hits.

    Network proximity enters through the feasibility filter (same reach rule as
    the pool policy); transitions are chained in request-completion order.
    """

    name = "dec_sarsa"

    def __init__(
        self,
        lb: LbId,
        qos: QosRequirements,
        config: SarsaConfig,
        idle_latency_ms: float,
        rng: np.random.Generator,
    ):
        self.lb = lb
        self.qos = qos
        self.config = config
        self.idle_latency_ms = idle_latency_ms
        self.rng = rng
        self.state = SarsaState(config)
        self.rtt_view: dict[InstanceId, float] = {}
        self.windows: dict[InstanceId, ObservationWindow] = {}
        self.feasible: set[InstanceId] = set()
        # Outcomes of the last window, keyed by observation time so pruning is O(1).
        self._outcomes: deque[tuple[float, bool]] = deque()
        self._outcome_count = 0
        self._outcome_good = 0
        self._pending: Optional[tuple[int, InstanceId, float]] = None
        self.last_diag: dict = {}

    def initialize(self, placement: dict[InstanceId, NodeId], rtts: dict[InstanceId, float]) -> None:
        self.rtt_view = dict(rtts)
        for m in placement:
            self.windows.setdefault(m, ObservationWindow(self.qos.window_ms))
        self._refresh_feasible(0.0)

    def _refresh_feasible(self, now_ms: float) -> None:
        lp_star = self.idle_latency_ms
        for w in self.windows.values():
            w.prune(now_ms)
            samples = w.proc_samples()
            if samples:
                p = percentile(samples, self.qos.rho)
                if p < lp_star:
                    lp_star = p
        self.feasible = {
            m for m, rtt in self.rtt_view.items() if rtt + lp_star <= self.qos.tau_ms
        }

    def maintenance_step(self, now_ms: float) -> None:
        self._refresh_feasible(now_ms)
        self.last_diag = {
            "explore_rate": self.state.explore_rate,
            "avg_reward": self.state.avg_reward,
            "n_feasible": len(self.feasible),
        }

    def _prune_outcomes(self, now_ms: float) -> None:
        cutoff = now_ms - self.qos.window_ms
        out = self._outcomes
        while out and out[0][0] < cutoff:
            _, ok = out.popleft()
            self._outcome_count -= 1
            self._outcome_good -= ok

    def _bucket(self, now_ms: float) -> int:
        self._prune_outcomes(now_ms)
        n = self._outcome_count
        return bucket_of(self._outcome_good / n if n else None, self.config.buckets)

    def route(self, now_ms: float) -> Optional[InstanceId]:
        if not self.rtt_view:
            return None
        cfg = self.config
        if self.feasible:
            m = sarsa_select(self.state, self._bucket(now_ms), self.feasible, self.rng)
        else:
            m = min(self.rtt_view, key=lambda i: (self.rtt_view[i], i))
        self.state.explore_rate = max(
            cfg.explore_floor, self.state.explore_rate * cfg.explore_decay
        )
        return m

    def record_outcome(self, m: InstanceId, record: RequestRecord, now_ms: float) -> None:
        self.windows.setdefault(m, ObservationWindow(self.qos.window_ms)).push(
            now_ms, record.total_ms, record.proc_ms, record.success
        )
        self._outcomes.append((now_ms, record.success))
        self._outcome_count += 1
        self._outcome_good += record.success
        s = self._bucket(now_ms)
        r = 1.0 if record.success else 0.0
        if self._pending is not None:
            ps, pa, pr = self._pending
            sarsa_update(self.state, ps, pa, pr, s, m)
        self._pending = (s, m, r)

    def on_probe(self, rtt_view: dict[InstanceId, float], now_ms: float) -> None:
        self.rtt_view = dict(rtt_view)

    def on_instance_added(self, m: InstanceId, node: NodeId, rtt_ms: float, now_ms: float) -> None:
        self.rtt_view[m] = rtt_ms
        self.windows.setdefault(m, ObservationWindow(self.qos.window_ms))
        self._refresh_feasible(now_ms)

    def on_instance_removed(self, m: InstanceId, now_ms: float) -> None:
        self.rtt_view.pop(m, None)
        self.windows.pop(m, None)
        self.feasible.discard(m)
        self.state.q_table = {
            (s, a): v for (s, a), v in self.state.q_table.items() if a != m
        }
        if self._pending is not None and self._pending[1] == m:
            self._pending = None

    def routing_distribution(self) -> dict[InstanceId, float]:
        """The epsilon-greedy selection distribution at the current state bucket."""
        if not self.feasible:
            if not self.rtt_view:
                return {}
            nearest = min(self.rtt_view, key=lambda i: (self.rtt_view[i], i))
            return {nearest: 1.0}
        ordered = sorted(self.feasible)
        s = self._last_bucket
        best = max(ordered, key=lambda m: (self.state.q(s, m), -m))
        eps = self.state.explore_rate
        share = eps / len(ordered)
        dist = {m: share for m in ordered}
        dist[best] += 1.0 - eps
        return dist

    @property
    def _last_bucket(self) -> int:
        return self._pending[0] if self._pending is not None else 0
