"""Evaluation metrics over a finished simulation trace.

All functions are pure over the immutable trace: per-client QoS satisfaction,
Jain's fairness index over per-instance load, rolling windowed QoS, measured
regret against the per-step oracle, and the empirical variation budget that
quantifies how non-stationary each LB's environment was.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ClientId, InstanceId, LbId
from .engine import SimulationTrace
from .estimator import percentile


def jain_index(loads) -> float:
    """Jain's fairness index (sum x)^2 / (n * sum x^2); 1 means perfectly even."""
    xs = list(loads)
    if not xs:
        raise ValueError("jain_index of empty sequence")
    if any(x < 0 for x in xs):
        raise ValueError("loads must be non-negative")
    sq = sum(x * x for x in xs)
    if sq == 0:
        raise ValueError("jain_index undefined for all-zero loads")
    s = sum(xs)
    return (s * s) / (len(xs) * sq)


def per_client_success(trace: SimulationTrace) -> dict[ClientId, float]:
    """Full-run success fraction per client."""
    total: dict[ClientId, int] = {}
    good: dict[ClientId, int] = {}
    for r in trace.records:
        total[r.client] = total.get(r.client, 0) + 1
        good[r.client] = good.get(r.client, 0) + r.success
    return {c: good[c] / total[c] for c in total}


def satisfied_fraction(trace: SimulationTrace) -> float:
    ratios = per_client_success(trace)
    if not ratios:
        return 0.0
    rho = trace.qos.rho
    return sum(1 for v in ratios.values() if v >= rho) / len(ratios)


def instance_request_counts(trace: SimulationTrace) -> dict[InstanceId, int]:
    counts = {m: 0 for m in trace.instance_ids}
    for r in trace.records:
        if r.instance is not None:
            counts[r.instance] = counts.get(r.instance, 0) + 1
    return counts


def rolling_qos(trace: SimulationTrace, window_s: float | None = None,
                step_s: float = 1.0) -> list[tuple[float, float]]:
    """System-wide success fraction over a trailing window, sampled every step.

    Returns (window-end seconds, fraction) pairs; boundaries whose window holds
    no requests are omitted.
    """
    if step_s <= 0:
        raise ValueError("step_s must be positive")
    window_ms = (window_s if window_s is not None else trace.qos.window_s) * 1000.0
    if window_ms <= 0:
        raise ValueError("window must be positive")
    step_ms = step_s * 1000.0
    ordered = sorted(trace.records, key=lambda r: r.send_time_ms)
    times = [r.send_time_ms for r in ordered]
    flags = np.array([r.success for r in ordered], dtype=np.int64)
    cum = np.concatenate([[0], np.cumsum(flags)])
    out: list[tuple[float, float]] = []
    n_steps = int(math.floor(trace.duration_ms / step_ms + 1e-9))
    for i in range(1, n_steps + 1):
        hi = i * step_ms
        lo = hi - window_ms
        a = np.searchsorted(times, lo, side="left")
        b = np.searchsorted(times, hi, side="left")
        if b > a:
            out.append((hi / 1000.0, float(cum[b] - cum[a]) / (b - a)))
    return out


@dataclass
class RegretSeries:
    tick_times_ms: list[float]
    per_lb_step: dict[LbId, np.ndarray]
    per_lb_cumulative: dict[LbId, np.ndarray]
    system_step: np.ndarray
    system_cumulative: np.ndarray


def regret_series(trace: SimulationTrace) -> RegretSeries:
    """Measured regret: per step, best single-instance success minus the weighted mix.

    The oracle puts all mass on the best arm under the realized load trajectory;
    the learner's value is its snapshot weights dotted with the same true
    success probabilities. Per-step values are always >= 0.
    """
    n_ticks = len(trace.tick_times_ms)
    lbs = trace.lb_ids
    per_step = {lb: np.zeros(n_ticks) for lb in lbs}
    for t in range(n_ticks):
        mu = trace.true_mu[t]
        w = trace.weights[t]
        mask = trace.active_mask[t]
        if not mask.any():
            continue
        mu_act = mu[:, mask]
        w_act = w[:, mask]
        oracle = np.nanmax(mu_act, axis=1)
        learned = np.nansum(w_act * mu_act, axis=1)
        step = np.maximum(oracle - learned, 0.0)  # the mix never beats the max; clamp float noise
        for i, lb in enumerate(lbs):
            per_step[lb][t] = step[i]
    per_cum = {lb: np.cumsum(per_step[lb]) for lb in lbs}
    system_step = np.sum([per_step[lb] for lb in lbs], axis=0) if lbs else np.zeros(n_ticks)
    return RegretSeries(
        tick_times_ms=list(trace.tick_times_ms),
        per_lb_step=per_step,
        per_lb_cumulative=per_cum,
        system_step=system_step,
        system_cumulative=np.cumsum(system_step),
    )


def variation_budget(trace: SimulationTrace) -> dict[LbId, float]:
    """Per-LB cumulative drift: sum over steps of the largest per-instance |mu(t+1)-mu(t)|.

    Only instances active at both endpoints of a step contribute; a constant
    series yields 0.
    """
    n_ticks = len(trace.tick_times_ms)
    result = {lb: 0.0 for lb in trace.lb_ids}
    for t in range(n_ticks - 1):
        both = trace.active_mask[t] & trace.active_mask[t + 1]
        if not both.any():
            continue
        delta = np.abs(trace.true_mu[t + 1][:, both] - trace.true_mu[t][:, both])
        step_max = np.nanmax(delta, axis=1)
        for i, lb in enumerate(trace.lb_ids):
            if not math.isnan(step_max[i]):
                result[lb] += float(step_max[i])
    return result


def placement_warnings(trace: SimulationTrace, idle_latency_ms: float) -> list[LbId]:
    """LBs whose nearest initial instance cannot meet the target even at idle service latency."""
    flagged = []
    reach = trace.qos.tau_ms - idle_latency_ms
    for lb in trace.lb_ids:
        nearest = min(
            (trace.rtt_ms[lb][trace.instance_nodes[m]] for m in trace.initial_instances),
            default=math.inf,
        )
        if nearest > reach:
            flagged.append(lb)
    return flagged


@dataclass
class MetricsReport:
    """Plot-ready summary of one run."""

    strategy: str
    seed: int
    duration_s: float
    n_clients: int
    per_client_success: dict[ClientId, float]
    satisfied_fraction: float
    jain_index: float
    instance_request_counts: dict[InstanceId, int]
    instance_request_rates: dict[InstanceId, float]
    instance_p90_proc_ms: dict[InstanceId, float]
    rolling: list[tuple[float, float]]
    regret: RegretSeries
    variation_budget: dict[LbId, float]
    unroutable: int
    placement_flags: list[LbId] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "n_clients": self.n_clients,
            "satisfied_fraction": self.satisfied_fraction,
            "jain_index": self.jain_index,
            "unroutable": self.unroutable,
            "per_client_success": {str(c): v for c, v in sorted(self.per_client_success.items())},
            "instance_request_counts": {str(m): v for m, v in sorted(self.instance_request_counts.items())},
            "instance_request_rates": {str(m): v for m, v in sorted(self.instance_request_rates.items())},
            "instance_p90_proc_ms": {
                str(m): (v if math.isfinite(v) else None)
                for m, v in sorted(self.instance_p90_proc_ms.items())
            },
            "system_regret_total": float(self.regret.system_cumulative[-1])
            if len(self.regret.system_cumulative)
            else 0.0,
            "variation_budget": {str(k): v for k, v in sorted(self.variation_budget.items())},
            "placement_flags": list(self.placement_flags),
        }


def compute_report(trace: SimulationTrace, idle_latency_ms: float | None = None,
                   rolling_step_s: float = 1.0) -> MetricsReport:
    ratios = per_client_success(trace)
    rho = trace.qos.rho
    counts = instance_request_counts(trace)
    duration_s = trace.duration_ms / 1000.0

    proc_by_instance: dict[InstanceId, list[float]] = {m: [] for m in trace.instance_ids}
    for r in trace.records:
        if r.instance is not None and math.isfinite(r.proc_ms):
            proc_by_instance[r.instance].append(r.proc_ms)
    p90 = {
        m: (percentile(v, 0.9) if v else math.inf) for m, v in proc_by_instance.items()
    }

    flags = placement_warnings(trace, idle_latency_ms) if idle_latency_ms is not None else []
    return MetricsReport(
        strategy=trace.strategy,
        seed=trace.seed,
        duration_s=duration_s,
        n_clients=len(ratios),
        per_client_success=ratios,
        satisfied_fraction=(
            sum(1 for v in ratios.values() if v >= rho) / len(ratios) if ratios else 0.0
        ),
        jain_index=jain_index(list(counts.values())) if any(counts.values()) else 0.0,
        instance_request_counts=counts,
        instance_request_rates={m: c / duration_s for m, c in counts.items()},
        instance_p90_proc_ms=p90,
        rolling=rolling_qos(trace, step_s=rolling_step_s),
        regret=regret_series(trace),
        variation_budget=variation_budget(trace),
        unroutable=trace.unroutable,
        placement_flags=flags,
    )
