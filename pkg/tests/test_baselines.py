import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlbsim.baselines import (
    DecSarsaPolicy,
    ProxyMityConfig,
    ProxyMityPolicy,
    SarsaConfig,
    SarsaState,
    bucket_of,
    proxymity_weights,
    sarsa_select,
    sarsa_update,
)
from qlbsim.core import QosRequirements, RequestRecord

QOS = QosRequirements(80.0, 0.9, 10.0)


# -- proximity blend ------------------------------------------------------------


def test_proxymity_alpha_one_all_mass_on_nearest():
    rtts = {0: 30.0, 1: 10.0, 2: 40.0, 3: 50.0}
    assert proxymity_weights(rtts, 1.0) == pytest.approx({0: 0.0, 1: 1.0, 2: 0.0, 3: 0.0})


def test_proxymity_alpha_zero_uniform():
    rtts = {0: 30.0, 1: 10.0, 2: 40.0, 3: 50.0}
    assert proxymity_weights(rtts, 0.0) == pytest.approx({m: 0.25 for m in rtts})


def test_proxymity_blend_example():
    rtts = {m: 10.0 * (m + 1) for m in range(10)}  # nearest is instance 0
    w = proxymity_weights(rtts, 0.9)
    assert w[0] == pytest.approx(0.91)
    for m in range(1, 10):
        assert w[m] == pytest.approx(0.01)


def test_proxymity_rejects_empty():
    with pytest.raises(ValueError):
        proxymity_weights({}, 0.5)


@given(
    st.dictionaries(st.integers(0, 12), st.floats(0.0, 200.0), min_size=1, max_size=10),
    st.floats(0.0, 1.0),
)
def test_proxymity_weights_always_valid(rtts, alpha):
    w = proxymity_weights(rtts, alpha)
    assert sum(w.values()) == pytest.approx(1.0, abs=1e-9)
    assert all(v >= -1e-12 for v in w.values())


@given(
    st.dictionaries(st.integers(0, 12), st.floats(0.1, 200.0), min_size=1, max_size=10),
    st.floats(0.01, 100.0),
)
def test_proxymity_argmin_scale_invariant(rtts, scale):
    a = proxymity_weights(rtts, 1.0)
    b = proxymity_weights({m: r * scale for m, r in rtts.items()}, 1.0)
    assert max(a, key=a.get) == max(b, key=b.get)


def test_proxymity_policy_fixed_until_placement_change():
    p = ProxyMityPolicy(0, QOS, ProxyMityConfig(alpha=1.0))
    p.initialize({0: 0, 1: 1}, {0: 5.0, 1: 20.0})
    w0 = dict(p.weights)
    rec = RequestRecord(0, 0, 0, 0.0, 5.0, 200.0, 205.0, False)
    p.record_outcome(0, rec, 100.0)
    p.maintenance_step(1000.0)
    assert p.weights == w0
    p.on_instance_removed(0, 2000.0)
    assert p.weights == pytest.approx({1: 1.0})


# -- SARSA ------------------------------------------------------------------------


def test_sarsa_select_tie_breaks_to_lowest_id():
    s = SarsaState(SarsaConfig(explore_rate=0.0))
    rng = np.random.default_rng(0)
    assert sarsa_select(s, 0, {3, 1, 2}, rng) == 1


def test_sarsa_select_argmax():
    s = SarsaState(SarsaConfig(explore_rate=0.0))
    s.q_table[(0, 2)] = 1.0
    rng = np.random.default_rng(0)
    assert sarsa_select(s, 0, {1, 2, 3}, rng) == 2


def test_sarsa_select_pure_exploration_is_uniform():
    # Binomial oracle: each arm expected n/k draws within 3 sigma.
    s = SarsaState(SarsaConfig(explore_rate=1.0))
    rng = np.random.default_rng(42)
    feasible = {0, 1, 2, 3, 4}
    n = 10_000
    counts = {m: 0 for m in feasible}
    for _ in range(n):
        counts[sarsa_select(s, 0, feasible, rng)] += 1
    p = 1 / len(feasible)
    sigma = math.sqrt(n * p * (1 - p))
    for m in feasible:
        assert abs(counts[m] - n * p) <= 3 * sigma


def test_sarsa_update_worked_example():
    s = SarsaState(SarsaConfig(learning_rate=0.1, avg_step=0.01))
    sarsa_update(s, 0, 1, 1.0, 0, 1)
    assert s.q_table[(0, 1)] == pytest.approx(0.1)
    assert s.avg_reward == pytest.approx(0.01)


def test_sarsa_update_fixed_point():
    s = SarsaState(SarsaConfig())
    s.avg_reward = 0.5
    s.q_table[(0, 1)] = 0.3
    s.q_table[(1, 2)] = 0.3
    sarsa_update(s, 0, 1, 0.5, 1, 2)
    assert s.q_table[(0, 1)] == pytest.approx(0.3)


def test_sarsa_q_bounded_over_many_random_updates():
    s = SarsaState(SarsaConfig(learning_rate=0.1, avg_step=0.01))
    rng = np.random.default_rng(7)
    rewards = rng.integers(0, 2, 10**6)
    states = rng.integers(0, 5, 10**6 + 1)
    actions = rng.integers(0, 10, 10**6 + 1)
    for i in range(10**6):
        sarsa_update(s, int(states[i]), int(actions[i]), float(rewards[i]),
                     int(states[i + 1]), int(actions[i + 1]))
    assert max(abs(v) for v in s.q_table.values()) < 100.0


def test_bucket_of():
    assert bucket_of(None, 5) == 0
    assert bucket_of(0.0, 5) == 0
    assert bucket_of(0.19, 5) == 0
    assert bucket_of(0.5, 5) == 2
    assert bucket_of(1.0, 5) == 4


def test_dec_sarsa_policy_learns_from_outcomes():
    p = DecSarsaPolicy(0, QOS, SarsaConfig(), idle_latency_ms=6.0,
                       rng=np.random.default_rng(3))
    p.initialize({0: 0, 1: 1}, {0: 5.0, 1: 20.0})
    now = 0.0
    for i in range(50):
        now = 100.0 * (i + 1)
        m = p.route(now)
        total = 10.0 if m == 0 else 120.0
        rec = RequestRecord(0, 0, m, now - total, 5.0, total - 5.0, total, total <= 80.0)
        p.record_outcome(m, rec, now)
    assert p.state.q_table  # transitions were chained
    dist = p.routing_distribution()
    assert sum(dist.values()) == pytest.approx(1.0)
    assert dist[0] > dist[1]  # the failing instance is not the greedy pick


def test_dec_sarsa_removal_purges_actions():
    p = DecSarsaPolicy(0, QOS, SarsaConfig(), idle_latency_ms=6.0,
                       rng=np.random.default_rng(3))
    p.initialize({0: 0, 1: 1}, {0: 5.0, 1: 20.0})
    p.state.q_table[(0, 1)] = 0.5
    p.on_instance_removed(1, 100.0)
    assert all(a != 1 for (_, a) in p.state.q_table)
    assert 1 not in p.feasible and 1 not in p.rtt_view


def test_configs_validate():
    with pytest.raises(ValueError):
        ProxyMityConfig(alpha=1.5)
    with pytest.raises(ValueError):
        SarsaConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        SarsaConfig(buckets=0)
