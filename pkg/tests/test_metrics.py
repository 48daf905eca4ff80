import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedstlf import metrics as mt
from fedstlf.errors import ConfigurationError, UndefinedGainError, UndefinedMetricError, UsageError

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestRmse:
    def test_identical(self):
        assert mt.rmse([1.0, 2.5, 3.0], [1.0, 2.5, 3.0]) == 0.0

    def test_example(self):
        assert mt.rmse([1, 2], [1, 4]) == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_single(self):
        assert mt.rmse([0], [3]) == 3.0

    @pytest.mark.parametrize("a,b", [([], []), ([1, 2], [1])])
    def test_bad_lengths(self, a, b):
        with pytest.raises(UsageError):
            mt.rmse(a, b)

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30))
    def test_symmetric_and_zero_iff_equal(self, pairs):
        y = [p[0] for p in pairs]
        y_hat = [p[1] for p in pairs]
        assert mt.rmse(y, y_hat) == mt.rmse(y_hat, y)
        assert (mt.rmse(y, y_hat) == 0) == (y == y_hat)


class TestMape:
    def test_example(self):
        assert mt.mape([2, 4], [1, 5]) == pytest.approx(37.5, abs=1e-12)

    def test_zero_actual_discarded(self):
        assert mt.mape([0, 2], [9, 1]) == 50.0

    def test_identical(self):
        assert mt.mape([1.0, 3.0], [1.0, 3.0]) == 0.0

    def test_all_zero(self):
        with pytest.raises(UndefinedMetricError):
            mt.mape([0, 0], [1, 2])

    def test_asymmetric(self):
        assert mt.mape([2.0], [4.0]) == 100.0
        assert mt.mape([4.0], [2.0]) == 50.0

    @given(st.lists(st.tuples(finite.filter(lambda v: abs(v) > 1e-6), finite), min_size=1, max_size=30))
    def test_non_negative(self, pairs):
        assert mt.mape([p[0] for p in pairs], [p[1] for p in pairs]) >= 0


def uniform(ids, kb):
    return mt.NetLoadParams(client_data_kb={c: kb for c in ids})


class TestCentralized:
    def test_three_clients(self):
        ids = ["a", "b", "c"]
        assert mt.centralized_load(uniform(ids, 16000), mt.Topology(), ids) == 48000

    def test_hops(self):
        topo = mt.Topology(hops={"a": 3})
        assert mt.centralized_load(uniform(["a"], 10), topo, ["a"]) == 30

    def test_empty(self):
        assert mt.centralized_load(mt.NetLoadParams(), mt.Topology(), []) == 0

    def test_missing_size(self):
        with pytest.raises(ConfigurationError):
            mt.centralized_load(uniform(["a"], 1), mt.Topology(), ["b"])

    def test_missing_hops(self):
        with pytest.raises(ConfigurationError):
            mt.centralized_load(uniform(["a"], 1), mt.Topology(default_hops=None), ["a"])

    def test_linear_in_size(self):
        topo = mt.Topology(hops={"a": 2, "b": 5})
        base = mt.centralized_load(mt.NetLoadParams(client_data_kb={"a": 3, "b": 7}), topo, "ab")
        doubled = mt.centralized_load(mt.NetLoadParams(client_data_kb={"a": 6, "b": 7}), topo, "ab")
        assert doubled - base == 3 * 2


class TestFederated:
    def test_scenario_one_traffic(self):
        params = mt.NetLoadParams(model_size_kb=1.9)
        selections = [[f"c{k}" for k in range(5)]] * 20
        # 20 rounds x 5 clients x 1 hop x 2 directions x 1.9 Kb
        assert mt.federated_load(params, mt.Topology(), selections) == pytest.approx(380.0, abs=1e-9)

    def test_zero_rounds(self):
        assert mt.federated_load(mt.NetLoadParams(), mt.Topology(), []) == 0

    def test_literal_single_direction(self):
        params = mt.NetLoadParams(model_size_kb=2, direction_multiplier=1)
        assert mt.federated_load(params, mt.Topology(hops={"a": 4}), [["a"]]) == 8

    def test_missing_hops(self):
        with pytest.raises(ConfigurationError):
            mt.federated_load(mt.NetLoadParams(), mt.Topology(default_hops=None), [["a"]])

    @given(st.floats(0.1, 100), st.integers(0, 30), st.integers(1, 10))
    def test_linear(self, size, rounds, k):
        sel = [[f"c{j}" for j in range(k)]] * rounds
        one = mt.federated_load(mt.NetLoadParams(model_size_kb=size), mt.Topology(), sel)
        two = mt.federated_load(mt.NetLoadParams(model_size_kb=2 * size), mt.Topology(), sel)
        assert two == pytest.approx(2 * one)
        assert one == pytest.approx(size * 2 * rounds * k)

    @pytest.mark.parametrize("bad", [dict(model_size_kb=0), dict(direction_multiplier=3),
                                     dict(client_data_kb={"a": -1})])
    def test_param_validation(self, bad):
        with pytest.raises(ConfigurationError):
            mt.NetLoadParams(**bad)


class TestGain:
    def test_equal_loads(self):
        assert mt.network_gain(5.0, 5.0) == 0.0

    def test_zero_centralized(self):
        with pytest.raises(UndefinedGainError):
            mt.network_gain(1.0, 0.0)

    def test_negative_not_clamped(self):
        assert mt.network_gain(3.0, 1.0) == -2.0

    @pytest.mark.parametrize("k,expected", [(5, 0.97625), (20, 0.905)])
    def test_scenario_gains(self, k, expected):
        ids = [f"c{j:03d}" for j in range(180)]
        params = mt.NetLoadParams.with_total_data(ids, 16_000.0, model_size_kb=1.9)
        central = mt.centralized_load(params, mt.Topology(), ids)
        federated = mt.federated_load(params, mt.Topology(), [ids[:k]] * 20)
        assert mt.network_gain(federated, central) == pytest.approx(expected, abs=1e-12)


def test_summary():
    s = mt.MetricSummary.of([1.0, 3.0])
    assert (s.min, s.max, s.mean) == (1.0, 3.0, 2.0)
    one = mt.MetricSummary.of([0.7])
    assert one.min == one.max == one.mean == 0.7


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=40))
def test_summary_mean_within_range(values):
    s = mt.MetricSummary.of(values)
    assert s.min <= s.mean <= s.max
    assert s.mean == pytest.approx(float(np.mean(values)), rel=1e-12, abs=1e-300)
