"""Sliding-window latency store and the smoothed QoS success-probability estimate.

The estimate is the probability that end-to-end latency stays at or below the
target, read off a Gaussian-kernel CDF over the window's samples:

    mu_hat = (1/n) * sum_i Phi((tau - x_i) / h)

with Silverman's robust bandwidth h = 0.9 * min(sigma, IQR/1.34) * n^(-1/5).
Degenerate bandwidths (identical samples, zero IQR) fall back to the plain
empirical indicator fraction; windows with fewer than `n_min` samples return
an optimistic placeholder supplied by the caller.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

_MIN_BANDWIDTH = 1e-12


@dataclass(frozen=True)
class QosEstimate:
    mu_hat: float
    n_samples: int
    method: str  # "kde" | "empirical" | "optimistic"


class ObservationWindow:
    """Time-ordered ring of (time, total latency, processing latency, success) samples.

    Samples older than the window duration are pruned on every push; reads that
    depend on "now" should call prune(now) first because an idle window receives
    no pushes.
    """

    __slots__ = ("window_ms", "_samples")

    def __init__(self, window_ms: float):
        if window_ms <= 0:
            raise ValueError("window_ms must be positive")
        self.window_ms = window_ms
        self._samples: deque[tuple[float, float, float, bool]] = deque()

    def __len__(self) -> int:
        return len(self._samples)

    @property
    def last_time_ms(self) -> float | None:
        return self._samples[-1][0] if self._samples else None

    def push(self, t_ms: float, total_ms: float, proc_ms: float, success: bool) -> None:
        if self._samples and t_ms < self._samples[-1][0]:
            raise ValueError(
                f"out-of-order sample: t={t_ms} precedes last t={self._samples[-1][0]}"
            )
        self._samples.append((t_ms, total_ms, proc_ms, success))
        self.prune(t_ms)

    def prune(self, now_ms: float) -> None:
        cutoff = now_ms - self.window_ms
        samples = self._samples
        while samples and samples[0][0] < cutoff:
            samples.popleft()

    def totals(self) -> np.ndarray:
        return np.fromiter((s[1] for s in self._samples), dtype=np.float64, count=len(self._samples))

    def proc_samples(self) -> list[float]:
        return [s[2] for s in self._samples]


def silverman_bandwidth(x: np.ndarray) -> float:
    """Robust rule-of-thumb bandwidth; 0 when the spread is degenerate."""
    n = x.size
    sigma = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = float(q75 - q25)
    return 0.9 * min(sigma, iqr / 1.34) * n ** (-0.2)


def estimate_success_probability(
    window: ObservationWindow,
    tau_ms: float,
    n_min: int,
    optimistic_mu: float,
) -> QosEstimate:
    """Estimate P(latency <= tau) from the window; optimistic below n_min samples."""
    n = len(window)
    if n < n_min:
        return QosEstimate(mu_hat=optimistic_mu, n_samples=n, method="optimistic")
    x = window.totals()
    h = silverman_bandwidth(x)
    if h <= _MIN_BANDWIDTH:
        mu = float(np.mean(x <= tau_ms))
        return QosEstimate(mu_hat=mu, n_samples=n, method="empirical")
    mu = float(np.mean(ndtr((tau_ms - x) / h)))
    return QosEstimate(mu_hat=min(1.0, max(0.0, mu)), n_samples=n, method="kde")


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the value at index ceil(q*n) - 1 of the sorted samples."""
    if not samples:
        raise ValueError("percentile of empty sequence")
    if not (0.0 < q <= 1.0):
        raise ValueError("q must be in (0, 1]")
    ordered = sorted(samples)
    rank = math.ceil(q * len(ordered))
    return ordered[rank - 1]
