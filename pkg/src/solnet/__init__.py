"""Day-ahead solar PV forecasting with synthetic-data pre-training."""

from .errors import (
    CheckpointCorruptError,
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    FetchError,
    LeakageError,
    NoDataForLocation,
    NumericalError,
    ResponseParseError,
    SolnetError,
)
from .evaluate import (
    MetricsReport,
    compute_metrics,
    destination_point,
    haversine_km,
    naive_seasonal_forecast,
    skill_score,
)
from .experiments import (
    CellResult,
    ExperimentReport,
    build_source_model,
    run_learning_curve,
    run_misspecification,
    run_seasonality_grid,
    stable_seed,
)
from .net import (
    ModelConfig,
    ModelParams,
    OptimizerState,
    adam_step,
    backward,
    batch_loss,
    clip_gradients,
    init_model,
    init_optimizer,
    load_model,
    lstm_cell_forward,
    model_forward,
    mse_loss,
    save_model,
)
from .series import (
    ScalerState,
    SplitSpec,
    WindowSample,
    WindowSet,
    apply_scaler,
    build_windows,
    chronological_split,
    encode_hour_cyclical,
    fit_scaler,
    invert_scaler,
    resample_hourly,
    split_train_validation,
    truncate_to_months,
)
from .synthgen import WorldSpec, generate_clear_sky_pv, generate_weather_scenario
from .timeseries import SiteSpec, TimeSeries, YearRange, hourly_timestamps
from .train import TrainConfig, TrainHistory, finetune_model, train_model

__version__ = "0.1.0"
