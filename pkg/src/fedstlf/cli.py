"""Command line entry point and TOML run configuration.

Verbs::

    fedstlf run <config>        train, evaluate, write report and traces
    fedstlf netload <config>    network-load accounting only, no training
    fedstlf synth <config>      write synthetic client CSVs
    fedstlf predict <checkpoint> <client_csv> <out>

Exit codes: 0 success, 1 configuration error, 2 data error, 3 anything else.
Set ``FEDSTLF_LOG_LEVEL`` (e.g. ``INFO``) for progress logging.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import nn
from .dataset import (
    ClientDataset,
    build_client_dataset,
    format_timestamp,
    load_client_csv,
    load_csv_dir,
    partition_clients,
    synth_generate,
    write_client_csv,
)
from .errors import ConfigurationError, FedStlfError
from .fedsim import (
    SCENARIO_PRESETS,
    STREAM_SELECT,
    ScenarioConfig,
    client_predictions_kw,
    derive_rng,
    eligible_clients,
    evaluate_global,
    evaluate_persistence,
    personalize,
    run_scenario,
    select_subset,
    summarize_clients,
)
from .metrics import (
    DEFAULT_DATA_SIZE_KB,
    DEFAULT_MODEL_SIZE_KB,
    NetLoadParams,
    Topology,
    centralized_load,
    federated_load,
    network_gain,
)

log = logging.getLogger("fedstlf")

REPORT_FORMAT = "fedstlf-report/1"


@dataclass(frozen=True)
class SyntheticSource:
    n_clients: int = 200
    n_days: int = 90
    flat_fraction: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    scenario_number: int | None = None
    csv_dir: Path | None = None
    synthetic: SyntheticSource | None = None
    n_participants: int = 180
    n_holdout: int = 20
    train_frac: float = 0.9
    topology: Topology = field(default_factory=Topology)
    model_size_kb: float = DEFAULT_MODEL_SIZE_KB
    total_data_kb: float | None = DEFAULT_DATA_SIZE_KB
    client_data_kb: dict = field(default_factory=dict)
    direction_multiplier: int = 2
    output_dir: Path = Path("fedstlf-out")
    personalize: bool = False
    personalize_epochs: int = 5
    personalize_lr: float = 0.005
    personalize_optimizer: str = "sgd"
    save_round_checkpoints: bool = False

    def echo(self) -> dict:
        """Plain-data copy of the configuration for the report header."""
        return {
            "scenario_number": self.scenario_number,
            "scenario": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.scenario).items()},
            "data": {
                "csv_dir": None if self.csv_dir is None else str(self.csv_dir),
                "synthetic": None if self.synthetic is None else asdict(self.synthetic),
                "n_participants": self.n_participants,
                "n_holdout": self.n_holdout,
                "train_frac": self.train_frac,
            },
            "topology": {
                "default_hops": self.topology.default_hops,
                "hops": dict(sorted(self.topology.hops.items())),
            },
            "netload": {
                "model_size_kb": self.model_size_kb,
                "total_data_kb": self.total_data_kb,
                "client_data_kb": dict(sorted(self.client_data_kb.items())),
                "direction_multiplier": self.direction_multiplier,
            },
            "personalization": {
                "enabled": self.personalize,
                "epochs": self.personalize_epochs,
                "learning_rate": self.personalize_lr,
                "optimizer": self.personalize_optimizer,
            },
        }


# key -> expected python type(s); nested tables are dicts of the same shape.
_SCENARIO_KEYS = {
    "rounds": int,
    "subset_size": int,
    "local_epochs": int,
    "learning_rate": (int, float),
    "optimizer": str,
    "eligibility_threshold": (int, float),
    "min_records": int,
    "look_back": int,
    "look_ahead": int,
    "layer_widths": list,
    "batch_size": int,
    "seed": int,
    "guard_after_select": bool,
}
_SCHEMA: dict[str, Any] = {
    "scenario": int,
    "output_dir": str,
    "personalize": bool,
    "save_round_checkpoints": bool,
    **_SCENARIO_KEYS,
    "data": {
        "csv_dir": str,
        "synthetic": {"n_clients": int, "n_days": int, "flat_fraction": (int, float)},
        "n_participants": int,
        "n_holdout": int,
        "train_frac": (int, float),
    },
    "personalization": {"epochs": int, "learning_rate": (int, float), "optimizer": str},
    "topology": {"default_hops": int, "hops": dict},
    "netload": {
        "model_size_kb": (int, float),
        "total_data_kb": (int, float),
        "client_data_kb": dict,
        "direction_multiplier": int,
    },
}

_TYPE_NAMES = {int: "integer", float: "number", str: "string", bool: "boolean", list: "array", dict: "table"}


def _type_name(expected) -> str:
    if isinstance(expected, tuple):
        return " or ".join(_TYPE_NAMES[t] for t in expected)
    return _TYPE_NAMES[expected]


def _validate(table: dict, schema: dict, prefix: str = "") -> None:
    for key, value in table.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigurationError(f"{path}: unknown key")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{path}: expected a table, got {type(value).__name__}")
            _validate(value, expected, path + ".")
            continue
        types = expected if isinstance(expected, tuple) else (expected,)
        # bool is an int subclass; never accept it where a number is wanted.
        if isinstance(value, bool) and bool not in types:
            ok = False
        else:
            ok = isinstance(value, types)
        if not ok:
            raise ConfigurationError(
                f"{path}: expected {_type_name(expected)}, got {type(value).__name__} {value!r}"
            )


def _require(ok: bool, path: str, message: str):
    if not ok:
        raise ConfigurationError(f"{path}: {message}")


def config_from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Validate a parsed configuration table and fill defaults."""
    _validate(raw, _SCHEMA)
    base_dir = base_dir or Path(".")

    number = raw.get("scenario")
    if number is not None:
        _require(number in SCENARIO_PRESETS, "scenario", f"must be one of {sorted(SCENARIO_PRESETS)}")
    preset_k, preset_epochs = SCENARIO_PRESETS[number or 1]

    scenario_kw = {k: raw[k] for k in _SCENARIO_KEYS if k in raw}
    scenario_kw.setdefault("subset_size", preset_k)
    scenario_kw.setdefault("local_epochs", preset_epochs)
    _require(scenario_kw.get("rounds", 20) >= 1, "rounds", "must be >= 1")
    if "layer_widths" in scenario_kw:
        widths = scenario_kw["layer_widths"]
        _require(all(isinstance(w, int) and not isinstance(w, bool) for w in widths),
                 "layer_widths", "must be an array of integers")
        if widths and widths[0] != 1:
            widths = [1, *widths]
        scenario_kw["layer_widths"] = tuple(widths)
    if "learning_rate" in scenario_kw:
        scenario_kw["learning_rate"] = float(scenario_kw["learning_rate"])
    if "eligibility_threshold" in scenario_kw:
        scenario_kw["eligibility_threshold"] = float(scenario_kw["eligibility_threshold"])
    try:
        scenario = ScenarioConfig(**scenario_kw)
    except ConfigurationError as exc:
        # ScenarioConfig messages lead with the field name, which is the key path.
        raise ConfigurationError(str(exc)) from None

    data = raw.get("data", {})
    has_csv = "csv_dir" in data
    has_synth = "synthetic" in data
    _require(not (has_csv and has_synth), "data", "exactly one of csv_dir or synthetic may be given")
    csv_dir = synthetic = None
    if has_csv:
        csv_dir = Path(data["csv_dir"])
    else:
        synthetic = SyntheticSource(**data.get("synthetic", {}))
        _require(synthetic.n_clients >= 1, "data.synthetic.n_clients", "must be >= 1")
        _require(synthetic.n_days >= 2, "data.synthetic.n_days", "must be >= 2")
        _require(0 <= synthetic.flat_fraction <= 1, "data.synthetic.flat_fraction", "must lie in [0, 1]")
    n_participants = data.get("n_participants", 180)
    n_holdout = data.get("n_holdout", 20)
    train_frac = float(data.get("train_frac", 0.9))
    _require(n_participants >= 1, "data.n_participants", "must be >= 1")
    _require(n_holdout >= 0, "data.n_holdout", "must be >= 0")
    _require(0 < train_frac < 1, "data.train_frac", "must lie strictly between 0 and 1")

    topo = raw.get("topology", {})
    for cid, d in topo.get("hops", {}).items():
        _require(isinstance(d, int) and not isinstance(d, bool) and d >= 1,
                 f"topology.hops.{cid}", "must be an integer >= 1")
    default_hops = topo.get("default_hops", 1)
    _require(default_hops >= 1, "topology.default_hops", "must be >= 1")
    topology = Topology(hops=dict(topo.get("hops", {})), default_hops=default_hops)

    net = raw.get("netload", {})
    model_size = float(net.get("model_size_kb", DEFAULT_MODEL_SIZE_KB))
    _require(model_size > 0, "netload.model_size_kb", "must be > 0")
    client_data = {k: float(v) for k, v in net.get("client_data_kb", {}).items()}
    for cid, size in client_data.items():
        _require(size > 0, f"netload.client_data_kb.{cid}", "must be > 0")
    total_data = net.get("total_data_kb", None if client_data else DEFAULT_DATA_SIZE_KB)
    if total_data is not None:
        total_data = float(total_data)
        _require(total_data > 0, "netload.total_data_kb", "must be > 0")
    _require(not (client_data and total_data is not None), "netload",
             "give either total_data_kb or client_data_kb, not both")
    multiplier = net.get("direction_multiplier", 2)
    _require(multiplier in (1, 2), "netload.direction_multiplier", "must be 1 or 2")

    pers = raw.get("personalization", {})
    p_epochs = pers.get("epochs", 5)
    p_lr = float(pers.get("learning_rate", 0.005))
    p_opt = pers.get("optimizer", "sgd")
    _require(p_epochs >= 0, "personalization.epochs", "must be >= 0")
    _require(p_lr > 0, "personalization.learning_rate", "must be > 0")
    _require(p_opt in ("sgd", "adam"), "personalization.optimizer", "must be 'sgd' or 'adam'")

    def resolve(p: Path) -> Path:
        return p if p.is_absolute() else base_dir / p

    return RunConfig(
        scenario=scenario,
        scenario_number=number,
        csv_dir=None if csv_dir is None else resolve(csv_dir),
        synthetic=synthetic,
        n_participants=n_participants,
        n_holdout=n_holdout,
        train_frac=train_frac,
        topology=topology,
        model_size_kb=model_size,
        total_data_kb=total_data,
        client_data_kb=client_data,
        direction_multiplier=multiplier,
        output_dir=resolve(Path(raw.get("output_dir", "fedstlf-out"))),
        personalize=raw.get("personalize", False),
        personalize_epochs=p_epochs,
        personalize_lr=p_lr,
        personalize_optimizer=p_opt,
        save_round_checkpoints=raw.get("save_round_checkpoints", False),
    )


def parse_config(path) -> RunConfig:
    """Read a TOML run configuration; relative paths resolve against its folder."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)


def _load_series(config: RunConfig):
    if config.csv_dir is not None:
        return load_csv_dir(config.csv_dir)
    s = config.synthetic
    return synth_generate(s.n_clients, s.n_days, config.scenario.seed, s.flat_fraction)


def _client_ids(config: RunConfig) -> list[str]:
    if config.csv_dir is not None:
        files = sorted(Path(config.csv_dir).glob("*.csv"))
        if not files:
            raise ConfigurationError(f"{config.csv_dir}: no client CSV files")
        return [f.stem for f in files]
    n = config.synthetic.n_clients
    width = len(str(n - 1))
    return [f"client_{k:0{width}d}" for k in range(n)]


def _netload_params(config: RunConfig, participants: list[str]) -> NetLoadParams:
    common = dict(model_size_kb=config.model_size_kb, direction_multiplier=config.direction_multiplier)
    if config.client_data_kb:
        return NetLoadParams(client_data_kb=config.client_data_kb, **common)
    return NetLoadParams.with_total_data(participants, config.total_data_kb, **common)


def _netload_section(config: RunConfig, participants: list[str], selections) -> dict:
    params = _netload_params(config, participants)
    central = centralized_load(params, config.topology, participants)
    federated = federated_load(params, config.topology, selections)
    return {
        "model_size_kb": params.model_size_kb,
        "direction_multiplier": params.direction_multiplier,
        "centralized_load_kb": central,
        "federated_load_kb": federated,
        "gain": network_gain(federated, central),
    }


def emit_predictions(model, client: ClientDataset, out_path) -> Path:
    """Write ``timestamp,actual_kw,predicted_kw`` for each test window."""
    actual, predicted = client_predictions_kw(model, client, use_test=True)
    out_path = Path(out_path)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("timestamp", "actual_kw", "predicted_kw"))
        for ts, a, p in zip(client.test_times, actual, predicted):
            writer.writerow((format_timestamp(ts), repr(float(a)), repr(float(p))))
    return out_path


def _fail(exc: BaseException) -> int:
    code = exc.exit_code if isinstance(exc, FedStlfError) else 3
    print(f"fedstlf: error: {exc}", file=sys.stderr)
    return code


def run(config: RunConfig, workers: int = 1) -> dict:
    """Execute one configured run and return the report written to disk."""
    sc = config.scenario
    series = _load_series(config)
    clients = {
        s.client_id: build_client_dataset(s, sc.look_back, sc.look_ahead, config.train_frac)
        for s in series
    }
    participants_ids, holdout_ids = partition_clients(
        list(clients), config.n_participants, config.n_holdout, sc.seed
    )
    participants = [clients[c] for c in participants_ids]
    holdout = [clients[c] for c in holdout_ids]
    out = Path(config.output_dir)
    pred_dir = out / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)

    netload = _netload_params(config, participants_ids)

    def save_round(report, params):
        if config.save_round_checkpoints:
            nn.save_checkpoint(params, out / f"round_{report.round_index:03d}.flsm")

    final, reports = run_scenario(
        sc, participants, workers=workers, netload=netload, topology=config.topology, on_round=save_round
    )
    nn.save_checkpoint(final, out / "final_model.flsm")

    evaluation = {}
    for group, members in (("participants", participants), ("holdout", holdout)):
        if not members:
            continue
        section = {
            "global": evaluate_global(final, members).as_dict(),
            "persistence": evaluate_persistence(members).as_dict(),
        }
        personalized = {}
        for client in members:
            emit_predictions(final, client, pred_dir / f"{client.client_id}_global.csv")
            if config.personalize:
                model = personalize(
                    final, client, config.personalize_epochs, config.personalize_lr,
                    config.personalize_optimizer, sc.seed, sc.batch_size,
                )
                personalized[client.client_id] = model
                emit_predictions(model, client, pred_dir / f"{client.client_id}_personalized.csv")
        if config.personalize:
            per_client = {
                cid: evaluate_global(model, [clients[cid]]).per_client[cid]
                for cid, model in personalized.items()
            }
            section["personalized"] = summarize_clients(per_client).as_dict()
        evaluation[group] = section

    selections = [list(r.selected_client_ids) for r in reports]
    report = {
        "format": REPORT_FORMAT,
        "config": config.echo(),
        "evaluation_split": "test (last 10% of each client's windows, chronological)",
        "clients": {
            "participants": participants_ids,
            "holdout": holdout_ids,
            "eligible": [
                c.client_id
                for c in eligible_clients(participants, sc.eligibility_threshold, sc.min_records)
            ],
        },
        "rounds": [r.as_dict() for r in reports],
        "final_checksum": nn.checksum(final),
        "evaluation": evaluation,
        "network_load": _netload_section(config, participants_ids, selections),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def cmd_run(config: RunConfig, workers: int = 1) -> int:
    try:
        report = run(config, workers)
    except (FedStlfError, OSError) as exc:
        return _fail(exc)
    log.info("wrote %s", Path(config.output_dir) / "report.json")
    print(f"report: {Path(config.output_dir) / 'report.json'} ({len(report['rounds'])} rounds)")
    return 0


def netload_summary(config: RunConfig) -> dict:
    """Network load for the configured scenario without training.

    Each round selects ``subset_size`` participants with the same seeded
    draw a training run would use.
    """
    sc = config.scenario
    participants, _ = partition_clients(_client_ids(config), config.n_participants, config.n_holdout, sc.seed)
    selections = [
        select_subset(participants, sc.subset_size, derive_rng(sc.seed, STREAM_SELECT, r))
        for r in range(sc.rounds)
    ]
    return _netload_section(config, participants, selections)


def cmd_netload(config: RunConfig) -> int:
    try:
        summary = netload_summary(config)
    except FedStlfError as exc:
        return _fail(exc)
    print(f"centralized_load_kb = {summary['centralized_load_kb']!r}")
    print(f"federated_load_kb = {summary['federated_load_kb']!r}")
    print(f"gain = {summary['gain']!r}")
    return 0


def cmd_synth(config: RunConfig) -> int:
    if config.synthetic is None:
        return _fail(ConfigurationError("data: synth needs a synthetic data source, not csv_dir"))
    try:
        target = Path(config.output_dir) / "data"
        target.mkdir(parents=True, exist_ok=True)
        series = _load_series(config)
        for s in series:
            write_client_csv(s, target / f"{s.client_id}.csv")
    except (FedStlfError, OSError) as exc:
        return _fail(exc)
    print(f"wrote {len(series)} client files to {target}")
    return 0


def cmd_predict(checkpoint, client_csv, out, look_back: int = 12, look_ahead: int = 1,
                train_frac: float = 0.9) -> int:
    try:
        model = nn.load_checkpoint(checkpoint)
        client = build_client_dataset(load_client_csv(client_csv), look_back, look_ahead, train_frac)
        emit_predictions(model, client, out)
    except (FedStlfError, OSError) as exc:
        return _fail(exc)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedstlf", description="Federated short-term load forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train, evaluate and write the scenario report")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=1, help="parallel client trainers per round")

    p = sub.add_parser("netload", help="print centralized/federated network load and gain")
    p.add_argument("config")

    p = sub.add_parser("synth", help="write synthetic client CSV files")
    p.add_argument("config")

    p = sub.add_parser("predict", help="write a prediction trace for one client")
    p.add_argument("checkpoint")
    p.add_argument("client_csv")
    p.add_argument("out")
    p.add_argument("--look-back", type=int, default=12)
    p.add_argument("--look-ahead", type=int, default=1)
    p.add_argument("--train-frac", type=float, default=0.9)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("FEDSTLF_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    if args.command == "predict":
        return cmd_predict(args.checkpoint, args.client_csv, args.out,
                           args.look_back, args.look_ahead, args.train_frac)
    try:
        config = parse_config(args.config)
    except ConfigurationError as exc:
        return _fail(exc)
    if args.command == "run":
        if args.workers < 1:
            return _fail(ConfigurationError("--workers must be >= 1"))
        return cmd_run(config, args.workers)
    if args.command == "netload":
        return cmd_netload(config)
    return cmd_synth(config)


if __name__ == "__main__":
    sys.exit(main())
