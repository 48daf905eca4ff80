"""Federated short-term load forecasting with a from-scratch stacked LSTM."""

from .dataset import (
    ClientDataset,
    MinMaxScaler,
    TimeSeries,
    build_client_dataset,
    load_client_csv,
    load_std,
    make_windows,
    minmax_fit,
    minmax_inverse,
    minmax_transform,
    partition_clients,
    split_train_test,
    synth_generate,
    write_client_csv,
)
from .fedsim import (
    SCENARIO_PRESETS,
    RoundReport,
    ScenarioConfig,
    aggregate,
    eligible_clients,
    evaluate_global,
    evaluate_persistence,
    local_train,
    personalize,
    run_scenario,
    select_subset,
)
from .metrics import (
    NetLoadParams,
    Topology,
    centralized_load,
    federated_load,
    mape,
    network_gain,
    rmse,
)
from .nn import (
    AdamState,
    LstmLayerParams,
    ModelParams,
    adam_step,
    flatten,
    init_params,
    load_checkpoint,
    model_backward,
    model_forward,
    mse_loss,
    save_checkpoint,
    sgd_step,
    unflatten,
)

__version__ = "0.1.0"
