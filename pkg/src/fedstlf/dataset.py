"""Per-client hourly load series: ingest, scaling, windowing, splitting.

Also hosts the synthetic household generator used in place of real
smart-meter exports.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateSeriesError,
    EmptyFileError,
    GapError,
    InsufficientDataError,
    ParseError,
)

HOUR = timedelta(hours=1)
DEFAULT_START = datetime(2019, 1, 1, tzinfo=timezone.utc)
DEFAULT_ELIGIBILITY_THRESHOLD = 0.05  # kW
CSV_HEADER = ("timestamp", "kw")


@dataclass(frozen=True)
class TimeSeries:
    client_id: str
    start: datetime
    values: np.ndarray
    step: timedelta = HOUR

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size == 0:
            raise InsufficientDataError(f"{self.client_id}: empty series")
        if self.step <= timedelta(0):
            raise ConfigurationError("series step must be positive")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def timestamp(self, index: int) -> datetime:
        return self.start + index * self.step

    @property
    def timestamps(self) -> list[datetime]:
        return [self.timestamp(k) for k in range(len(self))]


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def load_client_csv(path, client_id: str | None = None) -> TimeSeries:
    """Read a ``timestamp,kw`` file into a validated hourly series.

    The client id defaults to the file stem. No imputation: any missing,
    malformed or out-of-sequence row is an error naming its line.
    """
    path = Path(path)
    client_id = client_id or path.stem
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFileError(f"{path}: empty file")
        if tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise ParseError(f"{path}:1: expected header 'timestamp,kw', got {','.join(header)!r}")
        start = prev = None
        values = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{line}: expected 2 fields, got {len(row)}")
            try:
                ts = _parse_timestamp(row[0])
            except ValueError as exc:
                raise ParseError(f"{path}:{line}: bad timestamp {row[0]!r}") from exc
            if ts.minute or ts.second or ts.microsecond:
                raise ParseError(f"{path}:{line}: timestamp {row[0]!r} is not hour-aligned")
            if not row[1].strip():
                raise ParseError(f"{path}:{line}: missing kW reading")
            try:
                kw = float(row[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{line}: non-numeric kW {row[1]!r}") from exc
            if not math.isfinite(kw):
                raise ParseError(f"{path}:{line}: non-finite kW {row[1]!r}")
            if prev is not None:
                if ts <= prev:
                    raise ParseError(
                        f"{path}:{line}: timestamp {row[0]!r} is not after the previous row"
                    )
                if ts - prev != HOUR:
                    raise GapError(
                        f"{path}:{line}: gap before {format_timestamp(ts)} "
                        f"(previous reading {format_timestamp(prev)})"
                    )
            else:
                start = ts
            prev = ts
            values.append(kw)
    if not values:
        raise EmptyFileError(f"{path}: no data rows")
    return TimeSeries(client_id, start, np.array(values))


def write_client_csv(series: TimeSeries, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for k, kw in enumerate(series.values):
            writer.writerow((format_timestamp(series.timestamp(k)), repr(float(kw))))
    return path


@dataclass(frozen=True)
class MinMaxScaler:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise DegenerateSeriesError(f"scaler needs max > min, got [{self.min}, {self.max}]")


def minmax_fit(train_values) -> MinMaxScaler:
    values = np.asarray(train_values, dtype=np.float64)
    if values.size == 0:
        raise InsufficientDataError("cannot fit a scaler on no data")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        raise DegenerateSeriesError(f"constant series (every value {lo}) cannot be min-max scaled")
    return MinMaxScaler(lo, hi)


def minmax_transform(s: MinMaxScaler, x):
    return (np.asarray(x, dtype=np.float64) - s.min) / (s.max - s.min)


def minmax_inverse(s: MinMaxScaler, x_hat):
    return np.asarray(x_hat, dtype=np.float64) * (s.max - s.min) + s.min


def window_count(length: int, look_back: int = 12, look_ahead: int = 1) -> int:
    return length - look_back - look_ahead + 1


def make_windows(series, look_back: int = 12, look_ahead: int = 1):
    """Sliding windows ``X`` of ``look_back`` values and targets ``y``
    ``look_ahead`` steps past each window's end."""
    values = np.asarray(series, dtype=np.float64).ravel()
    if look_back < 1 or look_ahead < 1:
        raise ConfigurationError("look_back and look_ahead must be >= 1")
    n = window_count(values.size, look_back, look_ahead)
    if n < 1:
        raise InsufficientDataError(
            f"series of length {values.size} is too short for look-back {look_back} "
            f"and look-ahead {look_ahead}"
        )
    X = np.lib.stride_tricks.sliding_window_view(values, look_back)[:n].copy()
    y = values[look_back + look_ahead - 1 :][:n].copy()
    return X, y


def train_size(n: int, train_frac: float = 0.9) -> int:
    # Guard against 0.9 * n landing a hair under an integer.
    return int(math.floor(train_frac * n + 1e-9))


def split_train_test(X, y, train_frac: float = 0.9):
    """Chronological split: first ``floor(train_frac * n)`` windows train."""
    X = np.asarray(X)
    y = np.asarray(y)
    n = len(X)
    if len(y) != n:
        raise InsufficientDataError(f"X has {n} rows but y has {len(y)}")
    n_train = train_size(n, train_frac)
    if n_train < 1 or n - n_train < 1:
        raise InsufficientDataError(
            f"{n} windows cannot give both a train and a test window at fraction {train_frac}"
        )
    return (X[:n_train], y[:n_train]), (X[n_train:], y[n_train:])


def load_std(series) -> float:
    """Population standard deviation of raw kW readings."""
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, float)
    if values.size < 2:
        raise InsufficientDataError("load_std needs at least two readings")
    return float(np.std(values))


@dataclass(frozen=True)
class ClientDataset:
    """One client's scaled windows, split chronologically.

    ``train_times``/``test_times`` hold the timestamp of each window's target.
    ``load_std`` is measured on the raw readings of the training period.
    """

    client_id: str
    scaler: MinMaxScaler
    train_X: np.ndarray
    train_y: np.ndarray
    test_X: np.ndarray
    test_y: np.ndarray
    load_std: float
    train_times: tuple = ()
    test_times: tuple = ()
    look_back: int = 12
    look_ahead: int = 1

    @property
    def n_k(self) -> int:
        return len(self.train_y)

    def actual_kw(self, use_test: bool = True) -> np.ndarray:
        return minmax_inverse(self.scaler, self.test_y if use_test else self.train_y)


def build_client_dataset(
    series: TimeSeries,
    look_back: int = 12,
    look_ahead: int = 1,
    train_frac: float = 0.9,
) -> ClientDataset:
    raw = series.values
    n = window_count(raw.size, look_back, look_ahead)
    if n < 1:
        raise InsufficientDataError(
            f"{series.client_id}: {raw.size} readings are too few for look-back {look_back}"
        )
    n_train = train_size(n, train_frac)
    if n_train < 1 or n - n_train < 1:
        raise InsufficientDataError(
            f"{series.client_id}: {n} windows cannot be split at fraction {train_frac}"
        )
    # Every reading that appears in some training window or target.
    train_raw = raw[: n_train + look_back + look_ahead - 1]
    try:
        scaler = minmax_fit(train_raw)
    except DegenerateSeriesError as exc:
        raise DegenerateSeriesError(f"{series.client_id}: {exc}") from exc
    X, y = make_windows(minmax_transform(scaler, raw), look_back, look_ahead)
    (train_X, train_y), (test_X, test_y) = split_train_test(X, y, train_frac)
    offset = look_back + look_ahead - 1
    times = tuple(series.timestamp(offset + k) for k in range(n))
    return ClientDataset(
        client_id=series.client_id,
        scaler=scaler,
        train_X=train_X,
        train_y=train_y,
        test_X=test_X,
        test_y=test_y,
        load_std=load_std(train_raw),
        train_times=times[:n_train],
        test_times=times[n_train:],
        look_back=look_back,
        look_ahead=look_ahead,
    )


def partition_clients(ids: Sequence[str], n_participants: int = 180, n_holdout: int = 20, seed: int = 0):
    """Seeded disjoint split into participants and holdout, each sorted by id."""
    ids = sorted(ids)
    if len(set(ids)) != len(ids):
        raise ConfigurationError("client ids must be unique")
    if n_participants < 1 or n_holdout < 0:
        raise ConfigurationError("need at least one participant and a non-negative holdout")
    if len(ids) < n_participants + n_holdout:
        raise ConfigurationError(
            f"{len(ids)} clients cannot supply {n_participants} participants "
            f"and {n_holdout} holdout clients"
        )
    order = np.random.default_rng(seed).permutation(len(ids))
    participants = sorted(ids[k] for k in order[:n_participants])
    holdout = sorted(ids[k] for k in order[n_participants : n_participants + n_holdout])
    return participants, holdout


def synth_generate(
    n_clients: int,
    n_days: int,
    seed: int,
    flat_fraction: float = 0.0,
    start: datetime = DEFAULT_START,
) -> list[TimeSeries]:
    """Synthetic hourly household loads in kW.

    Each profile is a base load plus a two-harmonic daily shape (morning and
    evening peaks), scaled by a weekly modulation, with Gaussian noise and a
    floor at zero. ``round(flat_fraction * n_clients)`` clients get an almost
    constant profile whose spread stays far below the default eligibility
    threshold.
    """
    if n_clients < 1 or n_days < 2:
        raise ConfigurationError(f"need n_clients >= 1 and n_days >= 2, got {n_clients}, {n_days}")
    if not 0.0 <= flat_fraction <= 1.0:
        raise ConfigurationError(f"flat_fraction must lie in [0, 1], got {flat_fraction}")
    n_flat = int(round(flat_fraction * n_clients))
    flat = set(np.random.default_rng([seed, 0]).choice(n_clients, n_flat, replace=False).tolist())
    hours = np.arange(24 * n_days, dtype=np.float64)
    hod = hours % 24.0
    width = len(str(n_clients - 1))
    out = []
    for k in range(n_clients):
        rng = np.random.default_rng([seed, 1, k])
        base = rng.uniform(0.3, 0.8)
        if k in flat:
            values = base + rng.normal(0.0, 0.002, hours.size)
        else:
            morning, evening = rng.uniform(0.3, 1.0, 2)
            phase1 = rng.uniform(7.0, 9.0)
            phase2 = rng.uniform(18.0, 21.0)
            weekly_amp = rng.uniform(0.05, 0.2)
            weekly_phase = rng.uniform(0.0, 2 * np.pi)
            noise = rng.uniform(0.03, 0.08)
            daily = (
                morning * 0.5 * (1 + np.cos(2 * np.pi * (hod - phase1) / 24.0))
                + evening * 0.5 * (1 + np.cos(4 * np.pi * (hod - phase2) / 24.0))
            )
            weekly = 1.0 + weekly_amp * np.sin(2 * np.pi * hours / 168.0 + weekly_phase)
            values = base + daily * weekly + rng.normal(0.0, noise, hours.size)
        out.append(TimeSeries(f"client_{k:0{width}d}", start, np.maximum(values, 0.0)))
    return out


def load_csv_dir(directory) -> list[TimeSeries]:
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyFileError(f"{directory}: not a directory")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise EmptyFileError(f"{directory}: no client CSV files")
    return [load_client_csv(f) for f in files]
