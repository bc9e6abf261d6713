import math

import pytest
from hypothesis import given, strategies as st

from qlbsim.core import (
    QosRequirements,
    RequestRecord,
    Topology,
    aggregate_instance_rate,
    end_to_end_latency,
    normalize_weights,
    reward,
    validate_weights,
    windowed_success_ratio,
)


def rec(send_ms, success, client=0, lb=0):
    total = 10.0 if success else 100.0
    return RequestRecord(client, lb, 0, send_ms, 5.0, total - 5.0, total, success)


def test_end_to_end_latency_examples():
    assert end_to_end_latency(20, 15) == 35
    assert end_to_end_latency(0, 0) == 0
    assert end_to_end_latency(79.5, 0.5) == 80.0


def test_end_to_end_latency_rejects_negative():
    with pytest.raises(ValueError):
        end_to_end_latency(-1, 5)


def test_reward_boundary_inclusive():
    assert reward(80, 80) == 1
    assert reward(80.1, 80) == 0
    assert reward(0, 80) == 1


@given(st.floats(0, 1000), st.floats(0.1, 1000))
def test_reward_complements_strict_variant(total, tau):
    strict = 1 if total > tau else 0
    assert reward(total, tau) == 1 - strict


def test_aggregate_instance_rate_examples():
    two = {0: {5: 0.5}, 1: {5: 0.5}}
    assert aggregate_instance_rate(two, {0: 40.0, 1: 40.0}, 5) == pytest.approx(40.0)
    assert aggregate_instance_rate({0: {7: 1.0}}, {0: 10.0}, 7) == pytest.approx(10.0)
    three = {0: {2: 0.0}, 1: {2: 0.5}, 2: {2: 1.0}}
    rates = {0: 10.0, 1: 20.0, 2: 30.0}
    assert aggregate_instance_rate(three, rates, 2) == pytest.approx(40.0)


def test_windowed_success_ratio_examples():
    records = [rec(1000.0 * i, i != 3) for i in range(10)]
    assert windowed_success_ratio(records, 10_000.0, 10.0) == pytest.approx(0.9)
    assert windowed_success_ratio([], 10_000.0, 10.0) is None

    in_window = [rec(5000.0 + 100 * i, i < 4) for i in range(6)]
    older = [rec(100.0 * i, True) for i in range(4)]
    got = windowed_success_ratio(older + in_window, 6000.0, 1.0)
    assert got == pytest.approx(4 / 6, abs=1e-9)


@given(st.lists(st.tuples(st.floats(0, 1e6), st.booleans()), max_size=40),
       st.floats(1, 1e6), st.floats(0.001, 100))
def test_windowed_ratio_permutation_invariant(pairs, now, window):
    records = [rec(t, ok) for t, ok in pairs]
    a = windowed_success_ratio(records, now, window)
    b = windowed_success_ratio(list(reversed(records)), now, window)
    assert a == b


def test_request_record_success_consistent_with_formula():
    tau = 80.0
    for net, proc in ((20.0, 15.0), (60.0, 20.0), (60.0, 20.1), (0.0, 0.0)):
        total = end_to_end_latency(net, proc)
        r = RequestRecord(0, 0, 0, 0.0, net, proc, total, reward(total, tau) == 1)
        assert r.total_ms == pytest.approx(r.net_ms + r.proc_ms)
        assert r.success == (r.total_ms <= tau)


def test_qos_requirements_validation():
    QosRequirements(80.0, 0.9, 10.0)
    with pytest.raises(ValueError):
        QosRequirements(0.0, 0.9, 10.0)
    with pytest.raises(ValueError):
        QosRequirements(80.0, 1.5, 10.0)
    with pytest.raises(ValueError):
        QosRequirements(80.0, 0.9, 0.0)


def test_topology_validation():
    Topology([[0.0, 5.0], [5.0, 0.0]])
    with pytest.raises(ValueError):
        Topology([[0.0, 5.0], [6.0, 0.0]])  # asymmetric
    with pytest.raises(ValueError):
        Topology([[1.0, 5.0], [5.0, 0.0]])  # nonzero diagonal
    with pytest.raises(ValueError):
        Topology([[0.0, -1.0], [-1.0, 0.0]])


def test_weight_validation_and_normalization():
    validate_weights({})
    validate_weights({1: 0.25, 2: 0.75})
    with pytest.raises(ValueError):
        validate_weights({1: 0.5, 2: 0.6})
    with pytest.raises(ValueError):
        validate_weights({1: -0.1, 2: 1.1})
    assert normalize_weights({1: 2.0, 2: 6.0}) == {1: 0.25, 2: 0.75}
    assert normalize_weights({1: 0.0}) == {}


@given(st.dictionaries(st.integers(0, 20), st.floats(0.001, 100), min_size=1, max_size=10))
def test_normalized_weights_always_valid(raw):
    validate_weights(normalize_weights(raw))
