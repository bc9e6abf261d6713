import math

import pytest
from hypothesis import given, settings, strategies as st

import qlbsim.policy as policy_mod
from qlbsim.core import QosRequirements, RequestRecord
from qlbsim.policy import PolicyConfig, QEdgeProxyPolicy, compute_pool_weights

QOS = QosRequirements(tau_ms=80.0, rho=0.9, window_s=10.0)


def make_policy(rtts, config=None, qos=QOS, idle=6.0, sink=None):
    p = QEdgeProxyPolicy(0, qos, config or PolicyConfig(), idle, event_sink=sink)
    p.initialize({m: m for m in rtts}, dict(rtts))
    return p


def outcome(p, m, total_ms, now_ms, send_ms=None):
    send = now_ms - total_ms if send_ms is None else send_ms
    rec = RequestRecord(0, 0, m, send, 0.0, total_ms, total_ms, total_ms <= p.qos.tau_ms)
    p.record_outcome(m, rec, now_ms)


# -- initialization -----------------------------------------------------------


def test_initial_epsilon_is_one_minus_rho():
    p = make_policy({1: 10.0})
    assert p.epsilon == pytest.approx(0.1)


def test_initial_weights_uniform_over_feasible():
    p = make_policy({1: 10.0, 2: 20.0, 3: 30.0})
    assert p.weights == pytest.approx({1: 1 / 3, 2: 1 / 3, 3: 1 / 3})


def test_unreachable_instance_excluded_at_init():
    p = make_policy({1: 90.0, 2: 10.0})
    assert 1 not in p.qos_pool
    assert 2 in p.qos_pool


# -- weight formation ---------------------------------------------------------


def test_pool_weights_worked_example():
    w = compute_pool_weights({1: 0.95, 2: 0.5}, {1}, {2}, rho=0.9, eta=0.01, epsilon=0.1)
    assert w[1] == pytest.approx(0.9)
    assert w[2] == pytest.approx(0.1)


def test_pool_weights_empty_pool_donates_budget():
    only_explore = compute_pool_weights({2: 0.5, 3: 0.7}, set(), {2, 3}, 0.9, 0.01, 0.1)
    assert sum(only_explore.values()) == pytest.approx(1.0)
    only_exploit = compute_pool_weights({2: 0.95}, {2}, set(), 0.9, 0.01, 0.1)
    assert only_exploit == pytest.approx({2: 1.0})
    assert compute_pool_weights({}, set(), set(), 0.9, 0.01, 0.1) == {}


@given(
    st.dictionaries(st.integers(0, 15), st.floats(0.0, 1.0), min_size=1, max_size=10),
    st.floats(0.0, 0.1),
)
@settings(max_examples=100)
def test_pool_weights_budget_split_invariant(mu, epsilon):
    exploit = {m for m, v in mu.items() if v >= 0.9}
    explore = set(mu) - exploit
    w = compute_pool_weights(mu, exploit, explore, 0.9, 0.01, epsilon)
    assert sum(w.values()) == pytest.approx(1.0, abs=1e-9)
    assert all(v >= 0 for v in w.values())
    if exploit and explore:
        assert sum(w[m] for m in exploit) == pytest.approx(1 - epsilon, abs=1e-9)
        assert sum(w[m] for m in explore) == pytest.approx(epsilon, abs=1e-9)


# -- maintenance --------------------------------------------------------------


def feed_window(p, m, total_ms, n, start_ms, spacing_ms=100.0):
    for i in range(n):
        t = start_ms + i * spacing_ms
        outcome(p, m, total_ms, t, send_ms=t)


def feed_alternating(p, m, lo, hi, n, start_ms, spacing_ms=100.0):
    for i in range(n):
        t = start_ms + i * spacing_ms
        outcome(p, m, lo if i % 2 == 0 else hi, t, send_ms=t)


def test_maintenance_partitions_and_weights():
    p = make_policy({1: 0.0, 2: 40.0})
    feed_window(p, 1, 10.0, 20, 0.0)          # clearly satisfying
    feed_alternating(p, 2, 75.0, 95.0, 20, 0.0)  # mu around 0.5, no failure streaks
    p.maintenance_step(2100.0)
    assert 1 in p.exploit_pool
    assert 2 in p.explore_pool
    assert sum(p.weights.values()) == pytest.approx(1.0, abs=1e-9)
    assert set(p.weights) == p.qos_pool


def test_epsilon_resets_on_degradation():
    p = make_policy({1: 10.0})
    # previous window: perfect; current window: mostly failures
    for i in range(20):
        t = 1000.0 + i * 100
        outcome(p, 1, 10.0, t, send_ms=t)
    for i in range(20):
        t = 11_000.0 + i * 100
        outcome(p, 1, 200.0, t, send_ms=t)
    p.epsilon = 0.001
    p.maintenance_step(20_000.0)
    assert p.epsilon == pytest.approx(0.1)
    assert p.last_diag["degraded"] is True


def test_epsilon_decays_when_stable():
    p = make_policy({1: 10.0})
    for i in range(200):
        t = i * 100.0
        outcome(p, 1, 10.0, t, send_ms=t)
    p.epsilon = 0.1
    p.maintenance_step(20_000.0)
    assert p.epsilon == pytest.approx(0.1 * 0.01)
    assert p.last_diag["degraded"] is False


def test_epsilon_decays_when_windows_undefined():
    p = make_policy({1: 10.0})
    p.maintenance_step(1000.0)
    assert p.epsilon == pytest.approx(0.1 * 0.01)


def test_epsilon_never_exceeds_initial_budget():
    p = make_policy({1: 10.0, 2: 20.0})
    for step in range(1, 30):
        p.maintenance_step(step * 1000.0)
        assert p.epsilon <= 1 - QOS.rho + 1e-12


def test_maintenance_estimates_each_feasible_member_once(monkeypatch):
    p = make_policy({1: 10.0, 2: 20.0, 3: 30.0})
    calls = []
    orig = policy_mod.estimate_success_probability
    monkeypatch.setattr(
        policy_mod, "estimate_success_probability",
        lambda w, tau, n_min, optimistic_mu: calls.append(1) or orig(w, tau, n_min, optimistic_mu),
    )
    p.maintenance_step(1000.0)
    assert len(calls) == len(p.feasible) == 3


def test_feasibility_uses_best_processing_percentile():
    p = make_policy({1: 0.0, 2: 70.0}, idle=6.0)
    # only instance 1 has samples; its p90 processing is 20ms
    for i in range(10):
        t = i * 100.0
        rec = RequestRecord(0, 0, 1, t, 0.0, 20.0, 20.0, True)
        p.record_outcome(1, rec, t)
    p.maintenance_step(1000.0)
    # lp* = min(idle 6, best p90 20) = 6 -> 70 + 6 <= 80 keeps instance 2
    assert 2 in p.feasible


# -- outcome handling and cooldown ---------------------------------------------


def test_error_count_resets_on_success():
    p = make_policy({1: 10.0})
    outcome(p, 1, 200.0, 100.0)
    outcome(p, 1, 200.0, 200.0)
    outcome(p, 1, 10.0, 300.0)
    assert p.error_counts[1] == 0


def test_cooldown_after_consecutive_failures():
    events = []
    p = make_policy({1: 10.0, 2: 20.0}, sink=lambda kind, **f: events.append((kind, f)))
    p.weights = {1: 0.6, 2: 0.4}
    p.exploit_pool, p.explore_pool = {1, 2}, set()
    p._rebuild_swrr()
    now = 0.0
    for i in range(5):
        now = 100.0 * (i + 1)
        outcome(p, 1, 200.0, now)
    assert p.cooldown_until[1] == pytest.approx(now + 10_000.0)
    assert p.error_counts[1] == 0
    assert 1 not in p.qos_pool
    assert p.weights == pytest.approx({2: 1.0})
    assert events and events[0][0] == "cooldown"


def test_cooldown_excluded_from_feasible_until_expiry():
    p = make_policy({1: 10.0, 2: 20.0})
    p.cooldown_until[1] = 5_000.0
    p.maintenance_step(1_000.0)
    assert 1 not in p.feasible
    p.maintenance_step(5_000.0)
    assert 1 in p.feasible


def test_route_never_returns_cooling_instance():
    p = make_policy({1: 10.0, 2: 20.0})
    now = 0.0
    for i in range(5):
        now = 100.0 * (i + 1)
        outcome(p, 1, 200.0, now)
    for i in range(5):
        now = 1000.0 + 100.0 * (i + 1)
        outcome(p, 2, 200.0, now)
    # both cooling; pool is empty and the fallback refuses rather than violate cooldown
    assert p.qos_pool == set() or all(
        now < p.cooldown_until.get(m, -math.inf) for m in p.qos_pool
    )
    assert p.route(now) is None


# -- routing -------------------------------------------------------------------


def test_route_singleton_pool():
    p = make_policy({1: 10.0})
    assert p.route(0.0) == 1


def test_route_fallback_min_rtt():
    p = make_policy({1: 30.0, 2: 10.0})
    p.exploit_pool, p.explore_pool, p.weights = set(), set(), {}
    p._rebuild_swrr()
    assert p.route(0.0) == 2


def test_route_follows_swrr_sequence():
    p = make_policy({1: 10.0, 2: 20.0, 3: 30.0})
    p.weights = {1: 5 / 7, 2: 1 / 7, 3: 1 / 7}
    p._rebuild_swrr()
    seq = [p.route(0.0) for _ in range(7)]
    assert seq == [1, 1, 2, 1, 3, 1, 1]


# -- placement events ------------------------------------------------------------


def test_instance_added_within_reach_gets_zero_weight():
    p = make_policy({1: 10.0})
    # existing instance shows p90 processing of 20ms
    for i in range(10):
        t = i * 100.0
        rec = RequestRecord(0, 0, 1, t, 0.0, 20.0, 20.0, True)
        p.record_outcome(1, rec, t)
    p.maintenance_step(1000.0)
    p.on_instance_added(9, node=5, rtt_ms=30.0, now_ms=1500.0)
    assert 9 in p.explore_pool
    assert p.weights[9] == 0.0
    # it earns no traffic before the next maintenance step
    assert all(p.route(1600.0) != 9 for _ in range(20))


def test_instance_added_beyond_reach_ignored():
    p = make_policy({1: 10.0}, idle=20.0)
    p.on_instance_added(9, node=5, rtt_ms=70.0, now_ms=100.0)  # 70 + 20 > 80
    assert 9 not in p.qos_pool


def test_added_instance_optimism_wins_exploration_share():
    p = make_policy({1: 0.0, 2: 40.0})
    feed_window(p, 1, 10.0, 30, 0.0)             # healthy exploitation member
    feed_alternating(p, 2, 75.0, 95.0, 30, 0.0)  # measured poor: mu ~ 0.5
    p.on_instance_added(9, node=5, rtt_ms=30.0, now_ms=3200.0)
    p.maintenance_step(3300.0)
    assert 9 in p.explore_pool and 2 in p.explore_pool
    # optimistic newcomer scores rho + eta vs the measured instance's mu + eta
    assert p.weights[9] > p.weights[2]


def test_instance_removed_renormalizes():
    p = make_policy({1: 10.0, 2: 20.0})
    p.exploit_pool, p.explore_pool = {1, 2}, set()
    p.weights = {1: 0.75, 2: 0.25}
    p._rebuild_swrr()
    p.on_instance_removed(1, 100.0)
    assert p.weights == pytest.approx({2: 1.0})
    assert 1 not in p.rtt_view and 1 not in p.windows


def test_instance_removed_unknown_is_noop():
    p = make_policy({1: 10.0})
    before = dict(p.weights)
    p.on_instance_removed(42, 100.0)
    assert p.weights == before


def test_remove_last_instance_enables_fallback_refusal():
    p = make_policy({1: 10.0})
    p.on_instance_removed(1, 100.0)
    assert p.qos_pool == set()
    assert p.route(200.0) is None


def test_policy_config_validation():
    PolicyConfig()
    with pytest.raises(ValueError):
        PolicyConfig(gamma=1.5)
    with pytest.raises(ValueError):
        PolicyConfig(eta=0.0)
    with pytest.raises(ValueError):
        PolicyConfig(error_threshold=0)
    with pytest.raises(ValueError):
        PolicyConfig(reset_hysteresis=-0.1)
