"""Forecast error metrics and the centralized vs federated network-load model.

Sizes are in kilobits with decimal units (1 Mb = 1000 Kb). Only ratios of
loads matter for the gain, so any consistent unit works.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, UndefinedGainError, UndefinedMetricError, UsageError

DEFAULT_MODEL_SIZE_KB = 1.9
DEFAULT_DATA_SIZE_KB = 16_000.0


def _pair(actual, predicted):
    y = np.asarray(actual, dtype=np.float64).ravel()
    y_hat = np.asarray(predicted, dtype=np.float64).ravel()
    if y.size == 0 or y.size != y_hat.size:
        raise UsageError(f"need equal non-zero lengths, got {y.size} and {y_hat.size}")
    return y, y_hat


def rmse(actual, predicted) -> float:
    y, y_hat = _pair(actual, predicted)
    return math.sqrt(float(np.mean((y - y_hat) ** 2)))


def mape(actual, predicted) -> float:
    """Mean absolute percentage error, in percent.

    Zero actuals are dropped from both the sum and the count.
    """
    y, y_hat = _pair(actual, predicted)
    keep = y != 0
    if not keep.any():
        raise UndefinedMetricError("MAPE is undefined when every actual value is zero")
    return 100.0 * float(np.mean(np.abs((y[keep] - y_hat[keep]) / y[keep])))


@dataclass(frozen=True)
class Topology:
    """Hop count from each client to the aggregation server."""

    hops: Mapping[str, int] = field(default_factory=dict)
    default_hops: int | None = 1

    def __post_init__(self):
        for cid, d in self.hops.items():
            if int(d) != d or d < 1:
                raise ConfigurationError(f"hop count for {cid!r} must be an integer >= 1, got {d}")
        if self.default_hops is not None and self.default_hops < 1:
            raise ConfigurationError(f"default hop count must be >= 1, got {self.default_hops}")

    def hops_for(self, client_id: str) -> int:
        if client_id in self.hops:
            return int(self.hops[client_id])
        if self.default_hops is None:
            raise ConfigurationError(f"no hop count for client {client_id!r}")
        return self.default_hops


@dataclass(frozen=True)
class NetLoadParams:
    model_size_kb: float = DEFAULT_MODEL_SIZE_KB
    client_data_kb: Mapping[str, float] = field(default_factory=dict)
    direction_multiplier: int = 2

    def __post_init__(self):
        if not self.model_size_kb > 0:
            raise ConfigurationError(f"model size must be positive, got {self.model_size_kb}")
        if self.direction_multiplier not in (1, 2):
            raise ConfigurationError(
                f"direction multiplier must be 1 or 2, got {self.direction_multiplier}"
            )
        for cid, size in self.client_data_kb.items():
            if not size > 0:
                raise ConfigurationError(f"data size for {cid!r} must be positive, got {size}")

    @classmethod
    def with_total_data(cls, client_ids: Sequence[str], total_kb: float, **kw) -> "NetLoadParams":
        """Spread an aggregate data volume evenly over ``client_ids``."""
        if not client_ids:
            raise ConfigurationError("cannot spread data over zero clients")
        share = total_kb / len(client_ids)
        return cls(client_data_kb={cid: share for cid in client_ids}, **kw)


def centralized_load(params: NetLoadParams, topo: Topology, clients: Iterable[str]) -> float:
    """Traffic to ship every client's raw data to the server once."""
    terms = []
    for cid in clients:
        if cid not in params.client_data_kb:
            raise ConfigurationError(f"no data size for client {cid!r}")
        terms.append(params.client_data_kb[cid] * topo.hops_for(cid))
    return math.fsum(terms)


def federated_load(
    params: NetLoadParams, topo: Topology, selections: Iterable[Iterable[str]]
) -> float:
    """Model traffic over all rounds; ``selections`` lists each round's clients."""
    hop_total = 0
    for round_clients in selections:
        for cid in round_clients:
            hop_total += topo.hops_for(cid)
    return params.model_size_kb * params.direction_multiplier * hop_total


def network_gain(federated_kb: float, centralized_kb: float) -> float:
    """Fraction of traffic saved; negative when federated traffic is larger."""
    if centralized_kb == 0:
        raise UndefinedGainError("gain is undefined when centralized load is zero")
    return 1.0 - federated_kb / centralized_kb


@dataclass(frozen=True)
class MetricSummary:
    min: float
    max: float
    mean: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "MetricSummary":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            raise UsageError("cannot summarize an empty metric list")
        lo, hi = float(arr.min()), float(arr.max())
        # Rounding in the mean must not push it outside [min, max].
        return cls(lo, hi, min(max(float(arr.mean()), lo), hi))
