"""Command-line entry point: fetch, build-source, finetune, forecast,
evaluate and experiment, driven by a declarative YAML config."""
from __future__ import annotations

import os
import sys

import click
import numpy as np
import yaml

from . import ingest, plots, synthgen
from .errors import (
    ConfigError,
    DataError,
    NumericalError,
    SolnetError,
)
from .evaluate import compute_metrics
from .experiments import (
    build_source_model,
    run_learning_curve,
    run_misspecification,
    run_seasonality_grid,
    stable_seed,
)
from .net import ModelConfig, load_model, model_forward, save_model
from .series import (
    apply_scaler,
    fit_scaler,
    resample_hourly,
    split_train_validation,
)
from .timeseries import PV_CHANNEL, SiteSpec, TimeSeries, YearRange
from .train import TrainConfig, finetune_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_SCHEMA = {
    "site": {"latitude", "longitude", "tilt", "azimuth", "peak_power",
             "loss_fraction"},
    "seed": None,
    "output_dir": None,
    "data": {"source_pv_csv", "source_weather_csv", "target_pv_csv",
             "weather_forecast_csv", "history_csv", "checkpoint",
             "cache_dir", "source_years", "evaluation_start_year"},
    "model": {"num_layers", "hidden_units", "dropout_rate", "cell_variant",
              "multivariate", "source_scaler_mode"},
    "train": {"learning_rate", "batch_size", "max_epochs", "patience",
              "grad_clip"},
    "finetune": {"learning_rate", "batch_size", "max_epochs", "patience",
                 "freeze_first_layer", "grad_clip"},
    "experiment": {"kind", "months", "max_months", "terminal_months",
                   "offsets_km", "bearing", "finetune_months", "multivariate",
                   "test_start", "test_end", "source_checkpoint",
                   "synthetic_source"},
}


class RunConfig:
    """Validated view over the YAML config file."""

    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        unknown = set(raw) - set(_SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for section, allowed in _SCHEMA.items():
            value = raw.get(section)
            if allowed is not None and isinstance(value, dict):
                bad = set(value) - allowed
                if bad:
                    raise ConfigError(
                        f"unknown keys in [{section}]: {sorted(bad)}")
        self.raw = raw
        self.seed = int(raw.get("seed", 0))
        self.output_dir = raw.get("output_dir", "solnet-output")
        self._site = None
        if "site" in raw:
            self._site = SiteSpec(**raw["site"])

    @property
    def site(self) -> SiteSpec:
        if self._site is None:
            raise ConfigError("config is missing the [site] section")
        return self._site

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name) or {})

    def data_path(self, key: str, required: bool = True):
        path = self.section("data").get(key)
        if path is None:
            if required:
                raise ConfigError(f"config is missing data.{key}")
            return None
        return path

    def model_config(self, input_features: int) -> ModelConfig:
        model = self.section("model")
        model.pop("multivariate", None)
        model.pop("source_scaler_mode", None)
        return ModelConfig(input_features=input_features, **model)

    def source_scaler_mode(self) -> str:
        mode = self.section("model").get("source_scaler_mode", "source")
        if mode not in ("source", "target"):
            raise ConfigError(
                f"model.source_scaler_mode must be source or target, "
                f"got {mode!r}")
        return mode

    def multivariate(self) -> bool:
        return bool(self.section("model").get("multivariate", False)
                    or self.section("experiment").get("multivariate", False))

    def train_config(self, section: str = "train", **defaults) -> TrainConfig:
        merged = {**defaults, **self.section(section)}
        merged.setdefault("seed", self.seed)
        if section == "finetune":
            return TrainConfig.finetune_defaults(**merged)
        return TrainConfig(**merged)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return RunConfig(raw or {})


def _prepare_output_dir(cfg: RunConfig) -> str:
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    resolved = dict(cfg.raw)
    resolved["seed"] = cfg.seed
    with open(os.path.join(out, "resolved_config.yaml"), "w") as fh:
        yaml.safe_dump(resolved, fh, sort_keys=True)
    return out


def _load_target_pv(cfg: RunConfig, key: str = "target_pv_csv") -> TimeSeries:
    ts = ingest.load_pv_csv(cfg.data_path(key), cfg.site)
    if ts.resolution_minutes == 15:
        ts = resample_hourly(ts)
    return ts


def _load_weather(cfg: RunConfig, key: str, required: bool):
    path = cfg.data_path(key, required=required)
    if path is None:
        return None
    series, rejected = ingest.load_weather_forecast_csv(path)
    if rejected:
        click.echo(f"warning: {rejected} forecast rows with non-00:00 "
                   "reference time were ignored", err=True)
    if series is None:
        raise DataError(f"{path} contains no usable 00:00-referenced rows")
    return series


def _merged_target(cfg: RunConfig) -> TimeSeries:
    pv = _load_target_pv(cfg)
    if not cfg.multivariate():
        return pv
    weather = _load_weather(cfg, "weather_forecast_csv", required=True)
    start = max(pv.timestamps[0], weather.timestamps[0])
    end = min(pv.timestamps[-1], weather.timestamps[-1]) \
        + np.timedelta64(3600, "s")
    return pv.slice_time(start, end).merge_channels(
        weather.slice_time(start, end))


def _n_features(multivariate: bool) -> int:
    return 6 if multivariate else 3


# ---------------------------------------------------------------------------
# Commands


@click.group()
def main():
    """Day-ahead solar PV forecasting with synthetic-data pre-training."""


def _config_option(fn):
    return click.option("--config", "config_path", required=True,
                        type=click.Path(), help="YAML run config")(fn)


def _run(fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except NumericalError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    except SolnetError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    sys.exit(EXIT_OK)


@main.command()
@_config_option
@click.option("--live", is_flag=True,
              help="Actually call the remote services (default: dry run).")
def fetch(config_path, live):
    """Populate the on-disk cache with PVGIS and Open-Meteo data."""

    def _fetch():
        cfg = load_config(config_path)
        site = cfg.site
        data = cfg.section("data")
        if "source_years" not in data:
            raise ConfigError("fetch requires data.source_years")
        years = YearRange(**data["source_years"])
        cache_dir = os.environ.get("SOLNET_CACHE_DIR",
                                   data.get("cache_dir"))
        if cache_dir is None:
            raise ConfigError("fetch requires data.cache_dir or "
                              "SOLNET_CACHE_DIR")
        eval_year = data.get("evaluation_start_year")
        if not live:
            click.echo("dry run (pass --live to call the services):")
            click.echo(f"  PVGIS seriescalc {years.start_year}-"
                       f"{years.end_year} for ({site.latitude}, "
                       f"{site.longitude}) -> {cache_dir}")
            if cfg.multivariate():
                click.echo(f"  Open-Meteo archive {years.start_year}-"
                           f"{years.end_year} -> {cache_dir}")
            return
        pv = ingest.fetch_pvgis_series(site, years, cache_dir=cache_dir,
                                       evaluation_start_year=eval_year)
        click.echo(f"cached {len(pv)} hourly PVGIS samples")
        if cfg.multivariate():
            wx = ingest.fetch_openmeteo_history(
                site.latitude, site.longitude, years, cache_dir=cache_dir)
            click.echo(f"cached {len(wx)} hourly Open-Meteo samples")

    _run(_fetch)


def _source_series(cfg: RunConfig) -> TimeSeries:
    """Source-domain data: from CSV files or from the fetch cache."""
    data = cfg.section("data")
    if data.get("source_pv_csv"):
        pv = _load_target_pv(cfg, key="source_pv_csv")
        if not cfg.multivariate():
            return pv
        weather = _load_weather(cfg, "source_weather_csv", required=True)
        start = max(pv.timestamps[0], weather.timestamps[0])
        end = min(pv.timestamps[-1], weather.timestamps[-1]) \
            + np.timedelta64(3600, "s")
        return pv.slice_time(start, end).merge_channels(
            weather.slice_time(start, end))
    if "source_years" not in data:
        raise ConfigError("need data.source_pv_csv or data.source_years")
    years = YearRange(**data["source_years"])
    cache_dir = os.environ.get("SOLNET_CACHE_DIR", data.get("cache_dir"))
    pv = ingest.fetch_pvgis_series(
        cfg.site, years, cache_dir=cache_dir,
        evaluation_start_year=data.get("evaluation_start_year"))
    if not cfg.multivariate():
        return pv
    weather = ingest.fetch_openmeteo_history(
        cfg.site.latitude, cfg.site.longitude, years, cache_dir=cache_dir)
    start = max(pv.timestamps[0], weather.timestamps[0])
    end = min(pv.timestamps[-1], weather.timestamps[-1]) \
        + np.timedelta64(3600, "s")
    return pv.slice_time(start, end).merge_channels(
        weather.slice_time(start, end))


@main.command("build-source")
@_config_option
def build_source(config_path):
    """Train the source model and write a checkpoint."""

    def _build():
        cfg = load_config(config_path)
        out = _prepare_output_dir(cfg)
        multivariate = cfg.multivariate()
        source = _source_series(cfg)
        mc = cfg.model_config(_n_features(multivariate))
        tc = cfg.train_config("train")
        params, scaler, history = build_source_model(
            source, mc, tc, multivariate=multivariate,
            utc_offset=cfg.site.utc_offset_hours(),
            scaler_mode=cfg.source_scaler_mode(),
            peak_power=cfg.site.peak_power)
        ckpt = os.path.join(out, "source_model.ckpt")
        save_model(params, mc, scaler, ckpt)
        history.to_csv(os.path.join(out, "source_training.csv"))
        plots.plot_training_history(
            history, os.path.join(out, "source_training.png"))
        click.echo(f"source model written to {ckpt} "
                   f"(best val MSE {history.best_val_loss:.6f})")

    _run(_build)


@main.command()
@_config_option
def finetune(config_path):
    """Fine-tune a source checkpoint on observed target data."""

    def _finetune():
        cfg = load_config(config_path)
        out = _prepare_output_dir(cfg)
        ckpt_in = cfg.data_path("checkpoint")
        params, mc, _source_scaler = load_model(ckpt_in)
        multivariate = mc.input_features == 6
        target = _merged_target(cfg) if multivariate else _load_target_pv(cfg)
        scaler = fit_scaler(target, mode="target",
                            peak_power=cfg.site.peak_power)
        scaled = apply_scaler(target, scaler)
        train, val = split_train_validation(scaled)
        offset = cfg.site.utc_offset_hours()
        train_w = _windows(train, multivariate, offset)
        val_w = _windows(val, multivariate, offset)
        tc = cfg.train_config("finetune")
        tuned, history = finetune_model(params, mc, tc, train_w, val_w)
        ckpt_out = os.path.join(out, "finetuned_model.ckpt")
        save_model(tuned, mc, scaler, ckpt_out)
        history.to_csv(os.path.join(out, "finetune_training.csv"))
        if history.val_loss:
            plots.plot_training_history(
                history, os.path.join(out, "finetune_training.png"))
        click.echo(f"fine-tuned model written to {ckpt_out}")

    _run(_finetune)


def _windows(scaled: TimeSeries, multivariate: bool, offset: int):
    from .experiments import _scaled_windows_no_lead
    return _scaled_windows_no_lead(scaled, multivariate, offset)


@main.command()
@_config_option
def forecast(config_path):
    """Forecast the next day from a checkpoint and the last 24 h of data."""

    def _forecast():
        cfg = load_config(config_path)
        out = _prepare_output_dir(cfg)
        params, mc, scaler = load_model(cfg.data_path("checkpoint"))
        multivariate = mc.input_features == 6
        history = _load_target_pv(cfg, key="history_csv")
        scaled = apply_scaler(history, scaler)

        covariates = None
        if multivariate:
            weather = _load_weather(cfg, "weather_forecast_csv", required=True)
            covariates = apply_scaler(weather, scaler)

        offset = cfg.site.utc_offset_hours()
        forecast_day = (history.timestamps[-1] + np.timedelta64(3600, "s")) \
            .astype("datetime64[D]")
        sample = _forecast_inputs(scaled, covariates, forecast_day, offset)
        pred_scaled = model_forward(params, mc, sample[None, :, :],
                                    mode="infer")[0]
        bounds = scaler.bounds[PV_CHANNEL]
        pred_kw = np.maximum(
            0.0, pred_scaled * (bounds.x_max - bounds.x_min) + bounds.x_min)

        path = os.path.join(out, "forecast.csv")
        with open(path, "w") as fh:
            fh.write("hour,power_kw\n")
            for h, p in enumerate(pred_kw):
                fh.write(f"{h},{float(p)!r}\n")
        plots.plot_forecast_day(None, pred_kw,
                                os.path.join(out, "forecast.png"))
        click.echo(f"24-hour forecast for {forecast_day} written to {path}")

    _run(_forecast)


def _forecast_inputs(scaled: TimeSeries, covariates, forecast_day, offset):
    """Single inference window: last 24 h of PV plus hour encoding."""
    from .series import LAGS, encode_hour_cyclical
    from .timeseries import WEATHER_CHANNELS

    if len(scaled) < LAGS:
        raise DataError(f"history must cover at least {LAGS} hours")
    pv = scaled.values(PV_CHANNEL)[-LAGS:]
    mask = scaled.gap_mask[-LAGS:]
    if not np.all(mask):
        raise DataError("the last 24 hours of history contain gaps")
    stamps = scaled.timestamps[-LAGS:]
    sin_h, cos_h = encode_hour_cyclical(stamps, offset)
    cols = [pv, sin_h, cos_h]
    if covariates is not None:
        day_start = forecast_day.astype("datetime64[s]")
        day_end = day_start + np.timedelta64(86400, "s")
        wx = covariates.slice_time(day_start, day_end)
        if len(wx) != 24 or not np.all(wx.gap_mask):
            raise DataError(f"forecast weather does not cover {forecast_day}")
        cols.extend(wx.values(name) for name in WEATHER_CHANNELS)
    return np.column_stack(cols)


@main.command()
@_config_option
def evaluate(config_path):
    """Evaluate a checkpoint on a held-out PV CSV (scaled metrics)."""

    def _evaluate():
        cfg = load_config(config_path)
        out = _prepare_output_dir(cfg)
        params, mc, scaler = load_model(cfg.data_path("checkpoint"))
        multivariate = mc.input_features == 6
        target = _merged_target(cfg) if multivariate else _load_target_pv(cfg)
        scaled = apply_scaler(target, scaler)
        offset = cfg.site.utc_offset_hours()
        windows = _windows(scaled, multivariate, offset)
        if len(windows) == 0:
            raise DataError("test data yields no forecast samples")
        X, Y = windows.as_arrays()
        pred = model_forward(params, mc, X, mode="infer")
        metrics = compute_metrics(pred, Y)
        path = os.path.join(out, "metrics.csv")
        with open(path, "w") as fh:
            fh.write("rmse,mae,mbe,n\n")
            fh.write(f"{metrics.rmse!r},{metrics.mae!r},"
                     f"{metrics.mbe!r},{metrics.n}\n")
        click.echo(f"RMSE {metrics.rmse:.4f}  MAE {metrics.mae:.4f}  "
                   f"MBE {metrics.mbe:+.4f}  (n={metrics.n}) -> {path}")

    _run(_evaluate)


@main.command()
@click.argument("kind", type=click.Choice(["learning-curve", "seasonality",
                                           "misspec"]))
@_config_option
def experiment(kind, config_path):
    """Run one of the experiment protocols and write report + figures."""

    def _experiment():
        cfg = load_config(config_path)
        out = _prepare_output_dir(cfg)
        exp = cfg.section("experiment")
        if "test_start" not in exp:
            raise ConfigError("experiment config requires test_start")
        multivariate = cfg.multivariate()
        target = _merged_target(cfg) if multivariate else _load_target_pv(cfg)
        mc = cfg.model_config(_n_features(multivariate))
        tc = cfg.train_config("train")
        common = dict(test_start=exp["test_start"],
                      test_end=exp.get("test_end"),
                      global_seed=cfg.seed)

        if kind == "learning-curve":
            src, src_mc, _ = load_model(exp["source_checkpoint"])
            if src_mc.to_dict() != mc.to_dict():
                mc = src_mc
            report = run_learning_curve(
                cfg.site, src, mc, target,
                months=exp.get("months", list(range(0, 13))),
                multivariate=multivariate, train_config=tc,
                finetune_config=cfg.train_config(
                    "finetune", learning_rate=tc.learning_rate / 100.0),
                **common)
            report.to_csv(os.path.join(out, "learning_curve.csv"))
            plots.plot_rmse_curve(report, "months",
                                  os.path.join(out, "learning_curve.png"),
                                  xlabel="months of target data")
        elif kind == "seasonality":
            terminal = [tuple(t) if isinstance(t, list)
                        else tuple(int(x) for x in str(t).split("-"))
                        for t in exp["terminal_months"]]
            report = run_seasonality_grid(
                cfg.site, mc, target, terminal,
                max_m=int(exp.get("max_months", 3)),
                train_config=tc, **common)
            report.to_csv(os.path.join(out, "seasonality.csv"))
            report.skill_matrix_csv(os.path.join(out,
                                                 "seasonality_matrix.csv"))
            plots.plot_seasonality_heatmap(
                report, os.path.join(out, "seasonality.png"))
        else:
            provider = _source_provider(cfg, exp)
            report = run_misspecification(
                cfg.site, mc, target, provider,
                offsets_km=exp.get("offsets_km", [0, 100, 200, 400, 800]),
                bearing=float(exp.get("bearing", 125.0)),
                multivariate=multivariate,
                finetune_months=int(exp.get("finetune_months", 1)),
                source_train_config=tc,
                source_scaler_mode=cfg.source_scaler_mode(), **common)
            report.to_csv(os.path.join(out, "misspecification.csv"))
            plots.plot_rmse_curve(report, "offset_km",
                                  os.path.join(out, "misspecification.png"),
                                  xlabel="source offset [km]")
        click.echo(f"experiment report written to {out}")

    _run(_experiment)


def _source_provider(cfg: RunConfig, exp: dict):
    """Source-domain data per offset site: synthetic world or PVGIS."""
    synth = exp.get("synthetic_source")
    if synth:
        years = YearRange(**synth["years"])

        def provider(site):
            world = synthgen.WorldSpec(
                site=site,
                climate_seed=stable_seed(cfg.seed, "source-climate",
                                         synth.get("climate_seed", 0)),
                years=years)
            return synthgen.generate_weather_scenario(world)

        return provider

    data = cfg.section("data")
    if "source_years" not in data:
        raise ConfigError("misspec needs experiment.synthetic_source or "
                          "data.source_years")
    years = YearRange(**data["source_years"])
    cache_dir = os.environ.get("SOLNET_CACHE_DIR", data.get("cache_dir"))

    def provider(site):
        pv = ingest.fetch_pvgis_series(
            site, years, cache_dir=cache_dir,
            evaluation_start_year=data.get("evaluation_start_year"))
        if not cfg.multivariate():
            return pv
        weather = ingest.fetch_openmeteo_history(
            site.latitude, site.longitude, years, cache_dir=cache_dir)
        return pv.merge_channels(weather)

    return provider


if __name__ == "__main__":
    main()
