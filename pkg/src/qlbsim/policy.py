"""QoS-pool load-balancing policy: the bandit-style weight maintenance loop.

Each load balancer independently keeps a pool of service instances predicted
to meet the latency target, splits routing mass between an exploitation pool
(estimated success >= rho) and an exploration pool (the rest of the feasible
set), schedules an exploration budget that decays geometrically and resets on
observed QoS degradation, and routes per request through smooth weighted
round robin. Instances that fail repeatedly are benched for a cooldown.

Everything here sees only the owning LB's observations: its probed RTT view,
its own request outcomes, and reach-filtered placement events.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from . import swrr
from .core import InstanceId, LbId, NodeId, QosRequirements, RequestRecord
from .estimator import ObservationWindow, estimate_success_probability, percentile

EventSink = Callable[..., None]


@dataclass(frozen=True)
class PolicyConfig:
    """Tunables of the adaptive loop; defaults follow the evaluation configuration."""

    gamma: float = 0.01           # exploration decay per non-degraded decision step
    eta: float = 0.01             # score smoothing floor
    error_threshold: int = 5      # consecutive failures before cooldown
    cooldown_s: float = 10.0
    # Half a QoS window per decision step: re-deciding much faster than the
    # observation window turns over reacts to stale evidence and oscillates.
    decision_period_s: float = 5.0
    n_min: int = 5                # samples required before trusting the estimate
    reset_hysteresis: float = 0.0 # theta: degradation margin before an epsilon reset
    swrr_resolution: int = 1000

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must be in (0, 1)")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.error_threshold < 1:
            raise ValueError("error_threshold must be >= 1")
        if self.cooldown_s <= 0 or self.decision_period_s <= 0:
            raise ValueError("cooldown_s and decision_period_s must be positive")
        if self.reset_hysteresis < 0:
            raise ValueError("reset_hysteresis must be >= 0")


def compute_pool_weights(
    mu_hat: dict[InstanceId, float],
    exploit: set[InstanceId],
    explore: set[InstanceId],
    rho: float,
    eta: float,
    epsilon: float,
) -> dict[InstanceId, float]:
    """Turn per-instance success estimates into routing weights.

    Exploitation scores grow with the excess over rho, exploration scores with
    the estimate itself; both carry the floor eta. Each pool's scores are
    normalized to its budget (1 - epsilon vs epsilon); an empty pool donates
    its budget to the other.
    """
    if not exploit and not explore:
        return {}
    w_exploit = 1.0 - epsilon
    w_explore = epsilon
    if not exploit:
        w_exploit, w_explore = 0.0, 1.0
    elif not explore:
        w_exploit, w_explore = 1.0, 0.0
    weights: dict[InstanceId, float] = {}
    if exploit:
        scores = {m: (mu_hat[m] - rho) + eta for m in exploit}
        total = sum(scores.values())
        for m, s in scores.items():
            weights[m] = w_exploit * s / total
    if explore:
        scores = {m: mu_hat[m] + eta for m in explore}
        total = sum(scores.values())
        for m, s in scores.items():
            weights[m] = w_explore * s / total
    return weights


class QEdgeProxyPolicy:
    """One LB's private policy state: pools, weights, windows, error counters, cooldowns."""

    name = "qedgeproxy"

    def __init__(
        self,
        lb: LbId,
        qos: QosRequirements,
        config: PolicyConfig,
        idle_latency_ms: float,
        event_sink: Optional[EventSink] = None,
    ):
        self.lb = lb
        self.qos = qos
        self.config = config
        self.idle_latency_ms = idle_latency_ms
        self.event_sink = event_sink

        self.rtt_view: dict[InstanceId, float] = {}
        self.windows: dict[InstanceId, ObservationWindow] = {}
        self.error_counts: dict[InstanceId, int] = {}
        self.cooldown_until: dict[InstanceId, float] = {}
        self.history: deque[RequestRecord] = deque()

        self.feasible: set[InstanceId] = set()
        self.exploit_pool: set[InstanceId] = set()
        self.explore_pool: set[InstanceId] = set()
        self.weights: dict[InstanceId, float] = {}
        self.epsilon = 1.0 - qos.rho
        self._swrr: Optional[swrr.SwrrState] = None
        self.last_diag: dict = {}

    # -- lifecycle ----------------------------------------------------------

    def initialize(self, placement: dict[InstanceId, NodeId], rtts: dict[InstanceId, float]) -> None:
        """Feasibility-filter the initial placement and start uniform over the pool."""
        self.rtt_view = dict(rtts)
        for m in placement:
            self._ensure_tracked(m)
        self.feasible = {m for m in placement if rtts[m] <= self.qos.tau_ms}
        self.exploit_pool = set()
        self.explore_pool = set(self.feasible)
        self.epsilon = 1.0 - self.qos.rho
        pool = self.qos_pool
        if pool:
            u = 1.0 / len(pool)
            self.weights = {m: u for m in sorted(pool)}
        else:
            self.weights = {}
        self._rebuild_swrr()

    @property
    def qos_pool(self) -> set[InstanceId]:
        return self.exploit_pool | self.explore_pool

    def _ensure_tracked(self, m: InstanceId) -> None:
        if m not in self.windows:
            self.windows[m] = ObservationWindow(self.qos.window_ms)
            self.error_counts[m] = 0

    def _rebuild_swrr(self) -> None:
        positive = {m: w for m, w in self.weights.items() if w > 0}
        self._swrr = swrr.rebuild(positive, self.config.swrr_resolution) if positive else None

    def _best_expected_processing_ms(self, now_ms: float) -> float:
        """Best expected processing latency: what a healthy instance can deliver.

        The lowest per-instance rho-percentile of recent processing samples,
        anchored by the idle benchmark latency: reach estimation must not
        inflate when every currently measured instance happens to be congested,
        and instances the LB is not sampling are presumed healthy.
        """
        best = self.idle_latency_ms
        for w in self.windows.values():
            w.prune(now_ms)
            samples = w.proc_samples()
            if samples:
                p = percentile(samples, self.qos.rho)
                if p < best:
                    best = p
        return best

    # -- decision step ------------------------------------------------------

    def maintenance_step(self, now_ms: float) -> None:
        cfg = self.config
        qos = self.qos
        lp_star = self._best_expected_processing_ms(now_ms)
        self.feasible = {
            m
            for m, rtt in self.rtt_view.items()
            if rtt + lp_star <= qos.tau_ms and now_ms >= self.cooldown_until.get(m, -math.inf)
        }
        mu_hat: dict[InstanceId, float] = {}
        exploit: set[InstanceId] = set()
        explore: set[InstanceId] = set()
        for m in self.feasible:
            self._ensure_tracked(m)
            est = estimate_success_probability(
                self.windows[m], qos.tau_ms, cfg.n_min, optimistic_mu=qos.rho
            )
            mu_hat[m] = est.mu_hat
            if est.method != "optimistic" and est.mu_hat >= qos.rho:
                exploit.add(m)
            else:
                explore.add(m)
        self.exploit_pool = exploit
        self.explore_pool = explore
        self.weights = compute_pool_weights(
            mu_hat, exploit, explore, qos.rho, cfg.eta, self.epsilon
        )

        epsilon_used = self.epsilon
        q_now = self._success_ratio(now_ms - qos.window_ms, now_ms)
        q_prev = self._success_ratio(now_ms - 2 * qos.window_ms, now_ms - qos.window_ms)
        degraded = (
            q_now is not None
            and q_prev is not None
            and q_now < q_prev - cfg.reset_hysteresis
        )
        if degraded:
            self.epsilon = 1.0 - qos.rho
        else:
            self.epsilon = self.epsilon * cfg.gamma

        self._rebuild_swrr()
        self.last_diag = {
            "epsilon": epsilon_used,
            "epsilon_next": self.epsilon,
            "degraded": degraded,
            "q_now": q_now,
            "q_prev": q_prev,
            "lp_star": lp_star,
            "exploit_mass": sum(self.weights.get(m, 0.0) for m in exploit),
            "explore_mass": sum(self.weights.get(m, 0.0) for m in explore),
            "n_exploit": len(exploit),
            "n_explore": len(explore),
            "n_feasible": len(self.feasible),
        }

    def _success_ratio(self, lo_ms: float, hi_ms: float) -> Optional[float]:
        n = 0
        good = 0
        for r in self.history:
            t = r.send_time_ms
            if lo_ms <= t < hi_ms:
                n += 1
                good += r.success
        return good / n if n else None

    # -- request path -------------------------------------------------------

    def route(self, now_ms: float) -> Optional[InstanceId]:
        """SWRR pick from the QoS pool; min-RTT fallback when the pool is empty.

        Cooldown exclusion is unconditional: if every known instance is cooling
        the request is refused (fails fast) rather than fed to a benched queue.
        """
        if self._swrr is not None:
            return swrr.select(self._swrr)
        eligible = [
            m for m in self.rtt_view if now_ms >= self.cooldown_until.get(m, -math.inf)
        ]
        if not eligible:
            return None
        return min(eligible, key=lambda m: (self.rtt_view[m], m))

    def record_outcome(self, m: InstanceId, record: RequestRecord, now_ms: float) -> None:
        self._ensure_tracked(m)
        self.windows[m].push(now_ms, record.total_ms, record.proc_ms, record.success)
        self.history.append(record)
        cutoff = now_ms - 2 * self.qos.window_ms
        hist = self.history
        while hist and hist[0].send_time_ms < cutoff:
            hist.popleft()

        if record.success:
            self.error_counts[m] = 0
            return
        self.error_counts[m] = self.error_counts.get(m, 0) + 1
        if self.error_counts[m] < self.config.error_threshold:
            return
        until = now_ms + self.config.cooldown_s * 1000.0
        self.cooldown_until[m] = until
        self.error_counts[m] = 0
        if self.event_sink is not None:
            self.event_sink("cooldown", lb=self.lb, instance=m, until_ms=until)
        if m in self.qos_pool:
            self._drop_from_pool(m)

    def _drop_from_pool(self, m: InstanceId) -> None:
        self.exploit_pool.discard(m)
        self.explore_pool.discard(m)
        self.feasible.discard(m)
        self.weights.pop(m, None)
        total = sum(self.weights.values())
        if total > 0:
            self.weights = {k: w / total for k, w in self.weights.items()}
        self._rebuild_swrr()

    # -- environment callbacks ----------------------------------------------

    def on_probe(self, rtt_view: dict[InstanceId, float], now_ms: float) -> None:
        self.rtt_view = dict(rtt_view)

    def on_instance_added(self, m: InstanceId, node: NodeId, rtt_ms: float, now_ms: float) -> None:
        """Admit a new instance with zero weight; it earns traffic at the next decision step."""
        self.rtt_view[m] = rtt_ms
        self._ensure_tracked(m)
        lp_star = self._best_expected_processing_ms(now_ms)
        if rtt_ms + lp_star <= self.qos.tau_ms:
            self.feasible.add(m)
            self.explore_pool.add(m)
            self.weights.setdefault(m, 0.0)

    def on_instance_removed(self, m: InstanceId, now_ms: float) -> None:
        self.windows.pop(m, None)
        self.error_counts.pop(m, None)
        self.cooldown_until.pop(m, None)
        self.rtt_view.pop(m, None)
        if m in self.qos_pool:
            self._drop_from_pool(m)
        else:
            self.weights.pop(m, None)
        self.feasible.discard(m)

    def routing_distribution(self) -> dict[InstanceId, float]:
        return dict(self.weights)
