import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedstlf import dataset as ds
from fedstlf.errors import (
    ConfigurationError,
    DegenerateSeriesError,
    EmptyFileError,
    GapError,
    InsufficientDataError,
    ParseError,
)

T0 = datetime(2019, 1, 1, tzinfo=timezone.utc)


def write_rows(path, rows, header="timestamp,kw"):
    path.write_text("\n".join([header, *rows]) + "\n")
    return path


class TestCsv:
    def test_valid_file(self, tmp_path):
        path = write_rows(
            tmp_path / "c1.csv",
            ["2019-01-01T00:00:00Z,1.5", "2019-01-01T01:00:00Z,2.0", "2019-01-01T02:00:00Z,0.25"],
        )
        series = ds.load_client_csv(path)
        assert series.client_id == "c1"
        assert len(series) == 3
        assert series.start == T0
        assert series.values.tolist() == [1.5, 2.0, 0.25]

    def test_gap_names_timestamp(self, tmp_path):
        path = write_rows(tmp_path / "c.csv", ["2019-01-01T00:00:00Z,1", "2019-01-01T02:00:00Z,1"])
        with pytest.raises(GapError, match="2019-01-01T02:00:00Z"):
            ds.load_client_csv(path)

    def test_non_numeric_names_line(self, tmp_path):
        path = write_rows(tmp_path / "c.csv", ["2019-01-01T00:00:00Z,1", "2019-01-01T01:00:00Z,abc"])
        with pytest.raises(ParseError, match=r"c\.csv:3"):
            ds.load_client_csv(path)

    def test_missing_reading(self, tmp_path):
        path = write_rows(tmp_path / "c.csv", ["2019-01-01T00:00:00Z,1", "2019-01-01T01:00:00Z,"])
        with pytest.raises(ParseError, match="missing"):
            ds.load_client_csv(path)

    def test_empty_file(self, tmp_path):
        (tmp_path / "c.csv").write_text("")
        with pytest.raises(EmptyFileError):
            ds.load_client_csv(tmp_path / "c.csv")

    def test_header_only(self, tmp_path):
        with pytest.raises(EmptyFileError):
            ds.load_client_csv(write_rows(tmp_path / "c.csv", []))

    def test_not_hour_aligned(self, tmp_path):
        with pytest.raises(ParseError, match="hour-aligned"):
            ds.load_client_csv(write_rows(tmp_path / "c.csv", ["2019-01-01T00:30:00Z,1"]))

    def test_descending(self, tmp_path):
        path = write_rows(tmp_path / "c.csv", ["2019-01-01T01:00:00Z,1", "2019-01-01T00:00:00Z,1"])
        with pytest.raises(ParseError):
            ds.load_client_csv(path)

    def test_write_read_round_trip(self, tmp_path):
        series = ds.synth_generate(1, 3, seed=4)[0]
        back = ds.load_client_csv(ds.write_client_csv(series, tmp_path / f"{series.client_id}.csv"))
        assert back.client_id == series.client_id
        assert back.start == series.start
        assert np.array_equal(back.values, series.values)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(EmptyFileError):
            ds.load_csv_dir(tmp_path)


class TestScaler:
    def test_example(self):
        s = ds.minmax_fit([0, 5, 10])
        assert ds.minmax_transform(s, [0, 5, 10]).tolist() == [0.0, 0.5, 1.0]

    def test_constant(self):
        with pytest.raises(DegenerateSeriesError):
            ds.minmax_fit([3, 3, 3])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50).filter(lambda v: max(v) > min(v)))
    def test_round_trip(self, values):
        s = ds.minmax_fit(values)
        x = np.random.default_rng(len(values)).uniform(-2e3, 2e3, 20)
        np.testing.assert_allclose(ds.minmax_inverse(s, ds.minmax_transform(s, x)), x, rtol=0, atol=1e-9)


class TestWindows:
    def test_count(self):
        X, y = ds.make_windows(np.arange(100.0))
        assert X.shape == (88, 12) and y.shape == (88,)

    def test_first_row(self):
        X, y = ds.make_windows(np.arange(1.0, 15.0))
        assert X[0].tolist() == list(range(1, 13))
        assert y[0] == 13
        assert len(y) == 2

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            ds.make_windows(np.arange(12.0))

    @given(st.integers(2, 200), st.integers(1, 20), st.integers(1, 5))
    def test_count_formula(self, length, look_back, look_ahead):
        values = np.arange(float(length))
        if length < look_back + look_ahead:
            with pytest.raises(InsufficientDataError):
                ds.make_windows(values, look_back, look_ahead)
            return
        X, y = ds.make_windows(values, look_back, look_ahead)
        assert len(X) == len(y) == length - look_back - look_ahead + 1
        # target sits look_ahead steps after the window's last value
        assert np.all(y - X[:, -1] == look_ahead)


class TestSplit:
    @pytest.mark.parametrize("n,expected", [(100, (90, 10)), (10, (9, 1)), (30, (27, 3))])
    def test_floor_rule(self, n, expected):
        X = np.arange(n * 2.0).reshape(n, 2)
        (tx, ty), (ex, ey) = ds.split_train_test(X, np.arange(float(n)))
        assert (len(tx), len(ex)) == expected
        assert ty[-1] < ey[0]

    def test_one_window(self):
        with pytest.raises(InsufficientDataError):
            ds.split_train_test(np.zeros((1, 12)), np.zeros(1))


class TestPartition:
    ids = [f"h{k:03d}" for k in range(200)]

    def test_sizes_and_union(self):
        part, hold = ds.partition_clients(self.ids, 180, 20, seed=1)
        assert len(part) == 180 and len(hold) == 20
        assert not set(part) & set(hold)
        assert set(part) | set(hold) == set(self.ids)

    def test_deterministic(self):
        assert ds.partition_clients(self.ids, seed=5) == ds.partition_clients(self.ids, seed=5)
        assert ds.partition_clients(self.ids, seed=5) != ds.partition_clients(self.ids, seed=6)

    def test_too_few(self):
        with pytest.raises(ConfigurationError):
            ds.partition_clients(self.ids[:150])


class TestLoadStd:
    def test_constant(self):
        assert ds.load_std([2.0, 2.0, 2.0]) == 0.0

    def test_two_points(self):
        assert ds.load_std([0.0, 2.0]) == 1.0

    def test_four_points(self):
        values = [1.0, 2.0, 3.0, 4.0]
        mean = sum(values) / 4
        oracle = math.sqrt(sum((v - mean) ** 2 for v in values) / 4)
        assert ds.load_std(values) == pytest.approx(oracle, abs=1e-15)
        assert ds.load_std(values) == pytest.approx(math.sqrt(5 / 4), abs=1e-12)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            ds.load_std([1.0])


class TestSynthetic:
    def test_deterministic(self):
        a = ds.synth_generate(5, 90, seed=1)
        b = ds.synth_generate(5, 90, seed=1)
        assert all(x.values.tobytes() == y.values.tobytes() for x, y in zip(a, b))

    def test_non_negative_and_hourly(self):
        for s in ds.synth_generate(6, 30, seed=2):
            assert len(s) == 30 * 24
            assert np.all(s.values >= 0)

    def test_flat_fraction(self):
        series = ds.synth_generate(10, 30, seed=3, flat_fraction=0.2)
        low = [s for s in series if ds.load_std(s) < ds.DEFAULT_ELIGIBILITY_THRESHOLD]
        assert len(low) == 2

    @pytest.mark.parametrize("n_clients,n_days", [(0, 10), (3, 1)])
    def test_invalid(self, n_clients, n_days):
        with pytest.raises(ConfigurationError):
            ds.synth_generate(n_clients, n_days, seed=0)


class TestClientDataset:
    def test_shapes_and_counts(self):
        series = ds.synth_generate(1, 10, seed=0)[0]
        c = ds.build_client_dataset(series)
        n = 240 - 12
        assert c.n_k == math.floor(0.9 * n) == len(c.train_X)
        assert len(c.test_X) == n - c.n_k
        assert c.train_X.shape[1] == 12

    def test_chronological_split(self):
        for series in ds.synth_generate(3, 8, seed=5):
            c = ds.build_client_dataset(series)
            assert max(c.train_times) < min(c.test_times)
            # each target timestamp is the reading right after its window
            assert c.train_times[0] == series.timestamp(12)
            assert c.test_times[-1] == series.timestamp(len(series) - 1)

    def test_scaler_fit_on_training_only(self):
        # 120 readings -> 108 windows, 97 train; training readings end at index 108
        values = np.concatenate([np.linspace(0, 1, 115), [50.0] * 5])
        c = ds.build_client_dataset(ds.TimeSeries("x", T0, values))
        assert c.scaler.max < 50
        assert c.test_y.max() > 1

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.01, 100.0), st.integers(0, 1000))
    def test_scale_homogeneity(self, factor, seed):
        series = ds.synth_generate(1, 4, seed=seed)[0]
        scaled = ds.TimeSeries(series.client_id, series.start, series.values * factor)
        a, b = ds.build_client_dataset(series), ds.build_client_dataset(scaled)
        assert b.load_std == pytest.approx(factor * a.load_std, rel=1e-9)
        np.testing.assert_allclose(b.train_X, a.train_X, atol=1e-9)
        np.testing.assert_allclose(b.test_y, a.test_y, atol=1e-9)

    def test_constant_client_rejected(self):
        with pytest.raises(DegenerateSeriesError):
            ds.build_client_dataset(ds.TimeSeries("flat", T0, np.ones(100)))

    def test_too_short_client(self):
        with pytest.raises(InsufficientDataError):
            ds.build_client_dataset(ds.TimeSeries("tiny", T0, np.arange(13.0)))

    def test_timestamps_hourly(self):
        s = ds.TimeSeries("x", T0, np.arange(3.0))
        assert s.timestamps == [T0, T0 + timedelta(hours=1), T0 + timedelta(hours=2)]
