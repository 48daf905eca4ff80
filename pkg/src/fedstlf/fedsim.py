"""FederatedAveraging over simulated smart-meter clients.

Every random draw comes from a stream derived from the master seed and a
fixed key (purpose, round, client id), so results do not depend on how many
workers train clients in parallel.
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nn
from .dataset import DEFAULT_ELIGIBILITY_THRESHOLD, ClientDataset, minmax_inverse
from .errors import (
    AggregationError,
    ConfigurationError,
    InsufficientDataError,
    NoEligibleClientsError,
    ShapeError,
)
from .metrics import MetricSummary, NetLoadParams, Topology, federated_load, mape, rmse

log = logging.getLogger(__name__)

# Table I: scenario -> (clients per round, local epochs)
SCENARIO_PRESETS = {1: (5, 1), 2: (20, 1), 3: (5, 5), 4: (20, 5)}

STREAM_INIT = 0
STREAM_SELECT = 1
STREAM_TRAIN = 2
STREAM_PERSONALIZE = 3

OPTIMIZERS = ("sgd", "adam")


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; strings are hashed stably."""
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng(np.random.SeedSequence([seed, *(_key(k) for k in keys)]))


@dataclass(frozen=True)
class ScenarioConfig:
    rounds: int = 20
    subset_size: int = 5
    local_epochs: int = 1
    learning_rate: float = 0.005
    optimizer: str = "adam"
    eligibility_threshold: float = DEFAULT_ELIGIBILITY_THRESHOLD
    min_records: int = 24
    look_back: int = 12
    look_ahead: int = 1
    layer_widths: tuple[int, ...] = (1, 200, 200)
    batch_size: int = 32
    seed: int = 0
    guard_after_select: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(self.layer_widths))
        checks = [
            (self.rounds >= 0, "rounds", "must be >= 0"),
            (self.subset_size >= 1, "subset_size", "must be >= 1"),
            (self.local_epochs >= 1, "local_epochs", "must be >= 1"),
            (self.learning_rate > 0, "learning_rate", "must be > 0"),
            (self.optimizer in OPTIMIZERS, "optimizer", f"must be one of {OPTIMIZERS}"),
            (self.min_records >= 0, "min_records", "must be >= 0"),
            (self.look_back >= 1, "look_back", "must be >= 1"),
            (self.look_ahead >= 1, "look_ahead", "must be >= 1"),
            (self.batch_size >= 1, "batch_size", "must be >= 1"),
            (self.seed >= 0, "seed", "must be >= 0"),
        ]
        for ok, name, why in checks:
            if not ok:
                raise ConfigurationError(f"{name} {why}, got {getattr(self, name)!r}")
        nn.param_count(self.layer_widths)

    @classmethod
    def preset(cls, number: int, **overrides) -> "ScenarioConfig":
        if number not in SCENARIO_PRESETS:
            raise ConfigurationError(f"scenario must be one of {sorted(SCENARIO_PRESETS)}")
        k, epochs = SCENARIO_PRESETS[number]
        return cls(**{"subset_size": k, "local_epochs": epochs, **overrides})


@dataclass(frozen=True)
class ClientState:
    client_id: str
    dataset: ClientDataset
    eligible: bool


def is_eligible(client: ClientDataset, threshold: float, min_records: int) -> bool:
    return client.load_std > threshold and client.n_k >= min_records


def client_states(clients, threshold, min_records) -> list[ClientState]:
    return [
        ClientState(c.client_id, c, is_eligible(c, threshold, min_records))
        for c in sorted(clients, key=lambda c: c.client_id)
    ]


def eligible_clients(clients: Sequence[ClientDataset], threshold: float, min_records: int):
    """Clients whose load varies enough and who hold enough windows, by id."""
    return [s.dataset for s in client_states(clients, threshold, min_records) if s.eligible]


def _client_id(item) -> str:
    return item if isinstance(item, str) else item.client_id


def select_subset(eligible: Sequence, K: int, round_rng: np.random.Generator) -> list:
    """Uniform draw of ``min(K, len(eligible))`` clients without replacement.

    Works on datasets or bare client ids; the result is sorted by id.
    """
    if not eligible:
        raise NoEligibleClientsError("no eligible clients to select from")
    if K < 1:
        raise ConfigurationError(f"subset size must be >= 1, got {K}")
    pool = sorted(eligible, key=_client_id)
    picks = round_rng.choice(len(pool), size=min(K, len(pool)), replace=False)
    return [pool[k] for k in sorted(picks.tolist())]


def local_train(
    global_params: nn.ModelParams,
    data: ClientDataset,
    epochs: int,
    lr: float,
    optimizer: str = "sgd",
    client_rng: np.random.Generator | None = None,
    batch_size: int = 32,
):
    """Mini-batch training from a copy of ``global_params``.

    Each epoch visits the client's training windows in a fresh shuffled order.
    Adam starts from zero moments on every call. Returns ``(params, n_k)``.
    """
    n = data.n_k
    if n == 0:
        raise InsufficientDataError(f"{data.client_id}: no training windows")
    if epochs < 0:
        raise ConfigurationError(f"epochs must be >= 0, got {epochs}")
    if optimizer not in OPTIMIZERS:
        raise ConfigurationError(f"unknown optimizer {optimizer!r}")
    rng = client_rng if client_rng is not None else np.random.default_rng(0)
    params = global_params
    state = nn.AdamState.fresh(params) if optimizer == "adam" else None
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, grads = nn.batch_gradient(params, data.train_X[idx], data.train_y[idx])
            if state is None:
                params = nn.sgd_step(params, grads, lr)
            else:
                params, state = nn.adam_step(params, grads, state, lr)
    return params, n


def aggregate(updates: Sequence[tuple[nn.ModelParams, int]]) -> nn.ModelParams:
    """Weighted mean of client models with weights ``n_k / sum(n_k)``.

    Per coordinate the weighted terms are sorted before summing, so the
    result does not depend on the order of ``updates``.
    """
    if not updates:
        raise AggregationError("nothing to aggregate")
    widths = updates[0][0].widths
    for params, n_k in updates:
        if params.widths != widths:
            raise ShapeError(f"update widths {params.widths} differ from {widths}")
        if n_k <= 0:
            raise AggregationError(f"sample counts must be positive, got {n_k}")
    total = sum(n_k for _, n_k in updates)
    stacked = np.stack([nn.flatten(p) for p, _ in updates])
    weights = np.array([n_k / total for _, n_k in updates])[:, None]
    terms = np.sort(stacked * weights, axis=0)
    combined = terms[0].copy()
    for row in terms[1:]:
        combined += row
    # A convex combination cannot leave the client range; clip rounding.
    combined = np.clip(combined, stacked.min(axis=0), stacked.max(axis=0))
    return nn.unflatten(combined, widths)


@dataclass(frozen=True)
class ClientMetrics:
    rmse: float
    mape: float


@dataclass(frozen=True)
class EvaluationSummary:
    per_client: dict
    rmse: MetricSummary
    mape: MetricSummary

    def as_dict(self) -> dict:
        return {
            "rmse": vars(self.rmse),
            "mape": vars(self.mape),
            "clients": {
                cid: {"rmse": m.rmse, "mape": m.mape} for cid, m in sorted(self.per_client.items())
            },
        }


Predictor = Callable[[np.ndarray], np.ndarray]


def _predictor(m) -> Predictor:
    if isinstance(m, nn.ModelParams):
        return lambda X: nn.predict(m, X)
    if callable(m):
        return m
    raise TypeError(f"expected ModelParams or a callable predictor, got {type(m).__name__}")


def client_predictions_kw(m, client: ClientDataset, use_test: bool = True):
    """``(actual_kw, predicted_kw)`` for one client's split.

    Predictions are clipped at zero kW; training never sees the clip.
    """
    X = client.test_X if use_test else client.train_X
    if len(X) == 0:
        raise InsufficientDataError(f"{client.client_id}: empty evaluation set")
    predicted = minmax_inverse(client.scaler, _predictor(m)(X))
    return client.actual_kw(use_test), np.maximum(predicted, 0.0)


def summarize_clients(per_client: dict) -> EvaluationSummary:
    if not per_client:
        raise InsufficientDataError("no clients to evaluate")
    return EvaluationSummary(
        per_client=per_client,
        rmse=MetricSummary.of([m.rmse for m in per_client.values()]),
        mape=MetricSummary.of([m.mape for m in per_client.values()]),
    )


def evaluate_global(m, clients: Sequence[ClientDataset], use_test: bool = True) -> EvaluationSummary:
    """Per-client RMSE (kW) and MAPE (%) plus min/max/mean across clients.

    ``m`` is a model or any callable mapping scaled windows to scaled
    predictions.
    """
    per_client = {}
    for client in sorted(clients, key=lambda c: c.client_id):
        actual, predicted = client_predictions_kw(m, client, use_test)
        per_client[client.client_id] = ClientMetrics(rmse(actual, predicted), mape(actual, predicted))
    return summarize_clients(per_client)


def persistence_predictor(X: np.ndarray) -> np.ndarray:
    """Naive forecast: the next value equals the last observed one."""
    return np.asarray(X)[:, -1]


def evaluate_persistence(clients: Sequence[ClientDataset], use_test: bool = True):
    return evaluate_global(persistence_predictor, clients, use_test)


def train_mse(m: nn.ModelParams, client: ClientDataset) -> float:
    """Mean squared error on the client's scaled training windows."""
    return nn.mse_loss(nn.predict(m, client.train_X), client.train_y)[0]


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    selected_client_ids: tuple[str, ...]
    n_k: dict
    global_checksum: str
    evaluation: EvaluationSummary | None
    cumulative_federated_load_kb: float
    skipped_client_ids: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "round": self.round_index,
            "selected": list(self.selected_client_ids),
            "skipped": list(self.skipped_client_ids),
            "n_k": dict(sorted(self.n_k.items())),
            "checksum": self.global_checksum,
            "cumulative_federated_load_kb": self.cumulative_federated_load_kb,
            "evaluation": None
            if self.evaluation is None
            else {"rmse": vars(self.evaluation.rmse), "mape": vars(self.evaluation.mape)},
        }


def initial_model(config: ScenarioConfig) -> nn.ModelParams:
    seed = int(derive_rng(config.seed, STREAM_INIT).integers(2**63))
    return nn.init_params(config.layer_widths, seed)


def _train_one(global_params, client, config: ScenarioConfig, round_index: int):
    rng = derive_rng(config.seed, STREAM_TRAIN, round_index, client.client_id)
    return local_train(
        global_params,
        client,
        config.local_epochs,
        config.learning_rate,
        config.optimizer,
        rng,
        config.batch_size,
    )


def run_scenario(
    config: ScenarioConfig,
    clients: Sequence[ClientDataset],
    *,
    workers: int = 1,
    netload: NetLoadParams | None = None,
    topology: Topology | None = None,
    evaluate: bool = True,
    on_round: Callable[[RoundReport, nn.ModelParams], None] | None = None,
):
    """Run FederatedAveraging for ``config.rounds`` rounds.

    Returns ``(final_params, reports)``. Round reports evaluate the new
    global model on the test split of ``clients`` unless ``evaluate`` is off.
    Without ``netload`` the model size is its float64 parameter volume.
    """
    clients = sorted(clients, key=lambda c: c.client_id)
    eligible = eligible_clients(clients, config.eligibility_threshold, config.min_records)
    if not eligible:
        raise NoEligibleClientsError(
            f"none of {len(clients)} clients passes the eligibility gate "
            f"(threshold {config.eligibility_threshold} kW, min_records {config.min_records})"
        )
    eligible_ids = {c.client_id for c in eligible}
    pool = clients if config.guard_after_select else eligible
    topology = topology or Topology()
    if netload is None:
        netload = NetLoadParams(model_size_kb=nn.param_count(config.layer_widths) * 64 / 1000)

    global_params = initial_model(config)
    reports: list[RoundReport] = []
    selections: list[list[str]] = []
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(config.rounds):
            selected = select_subset(pool, config.subset_size, derive_rng(config.seed, STREAM_SELECT, r))
            # Algorithm guard: only eligible clients receive and train the model.
            training = [c for c in selected if c.client_id in eligible_ids]
            skipped = tuple(c.client_id for c in selected if c.client_id not in eligible_ids)
            if executor is None:
                results = [_train_one(global_params, c, config, r) for c in training]
            else:
                results = list(executor.map(lambda c: _train_one(global_params, c, config, r), training))
            if results:
                global_params = aggregate(results)
            ids = [c.client_id for c in training]
            selections.append(ids)
            report = RoundReport(
                round_index=r,
                selected_client_ids=tuple(ids),
                n_k={cid: n for cid, (_, n) in zip(ids, results)},
                global_checksum=nn.checksum(global_params),
                evaluation=evaluate_global(global_params, clients) if evaluate else None,
                cumulative_federated_load_kb=federated_load(netload, topology, selections),
                skipped_client_ids=skipped,
            )
            log.info(
                "round %d: %d clients, checksum %s", r, len(ids), report.global_checksum
            )
            reports.append(report)
            if on_round is not None:
                on_round(report, global_params)
    finally:
        if executor is not None:
            executor.shutdown()
    return global_params, reports


def personalize(
    global_params: nn.ModelParams,
    client: ClientDataset,
    epochs: int = 5,
    lr: float = 0.005,
    optimizer: str = "sgd",
    seed: int = 0,
    batch_size: int = 32,
) -> nn.ModelParams:
    """Retrain the global model on one client's training data only."""
    rng = derive_rng(seed, STREAM_PERSONALIZE, client.client_id)
    params, _ = local_train(global_params, client, epochs, lr, optimizer, rng, batch_size)
    return params
