"""The three experiment protocols and their tabular report container.

All runners share one evaluation discipline: a fixed test span, a fixed
target-mode scaler fitted once on the pre-test data, and per-cell seeds
derived deterministically from the global seed and the cell coordinates.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FetchError
from .evaluate import MetricsReport, compute_metrics, destination_point
from .net import ModelConfig, init_model, model_forward
from .series import (
    WindowSet,
    apply_scaler,
    build_windows,
    fit_scaler,
    split_train_validation,
    truncate_to_months,
)
from .timeseries import PV_CHANNEL, WEATHER_CHANNELS, SiteSpec, TimeSeries
from .train import TrainConfig, finetune_model, train_model

NAIVE = "naive"
TARGET = "target"
TRANSFER = "transfer"
ZERO_SHOT = "zero_shot"

NA = "n.a."


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from arbitrary identifying parts."""
    digest = hashlib.sha256("|".join(repr(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class CellResult:
    """Metrics for one (grid cell, model kind) pair."""

    axes: dict
    kind: str
    status: str = "ok"  # "ok", "n.a." or "failed"
    rmse: float = math.nan
    mae: float = math.nan
    mbe: float = math.nan
    n: int = 0
    note: str = ""

    @classmethod
    def from_metrics(cls, axes, kind, metrics: MetricsReport) -> "CellResult":
        return cls(axes=axes, kind=kind, rmse=metrics.rmse, mae=metrics.mae,
                   mbe=metrics.mbe, n=metrics.n)

    @classmethod
    def unavailable(cls, axes, kind, note="") -> "CellResult":
        return cls(axes=axes, kind=kind, status=NA, note=note)

    @classmethod
    def failed(cls, axes, kind, note) -> "CellResult":
        return cls(axes=axes, kind=kind, status="failed", note=note)


@dataclass
class ExperimentReport:
    """Long-format experiment results with lossless CSV round trip."""

    name: str
    axis_names: list
    cells: list = field(default_factory=list)
    scaler_digest: str = ""

    def cell(self, kind: str, **axes) -> CellResult:
        for c in self.cells:
            if c.kind == kind and c.axes == axes:
                return c
        raise KeyError(f"no cell kind={kind} axes={axes}")

    def kinds(self):
        return sorted({c.kind for c in self.cells})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# solnet-experiment name={self.name} "
                     f"scaler_digest={self.scaler_digest}\n")
            writer = csv.writer(fh)
            writer.writerow([f"axis_{a}" for a in self.axis_names]
                            + ["kind", "status", "rmse", "mae", "mbe", "n",
                               "note"])
            for c in self.cells:
                row = [_axis_str(c.axes[a]) for a in self.axis_names]
                row += [c.kind, c.status,
                        "" if math.isnan(c.rmse) else repr(float(c.rmse)),
                        "" if math.isnan(c.mae) else repr(float(c.mae)),
                        "" if math.isnan(c.mbe) else repr(float(c.mbe)),
                        c.n, c.note]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "ExperimentReport":
        with open(path, newline="") as fh:
            meta = fh.readline().strip()
            if not meta.startswith("# solnet-experiment"):
                raise DataError(f"{path} is not an experiment report")
            fields = dict(part.split("=", 1)
                          for part in meta[len("# solnet-experiment "):].split())
            reader = csv.reader(fh)
            header = next(reader)
            axis_names = [h[len("axis_"):] for h in header
                          if h.startswith("axis_")]
            n_axes = len(axis_names)
            cells = []
            for row in reader:
                axes = {a: _axis_value(v)
                        for a, v in zip(axis_names, row[:n_axes])}
                kind, status, rmse, mae, mbe, n, note = row[n_axes:]
                cells.append(CellResult(
                    axes=axes, kind=kind, status=status,
                    rmse=float(rmse) if rmse else math.nan,
                    mae=float(mae) if mae else math.nan,
                    mbe=float(mbe) if mbe else math.nan,
                    n=int(n), note=note))
        return cls(name=fields["name"], axis_names=axis_names, cells=cells,
                   scaler_digest=fields.get("scaler_digest", ""))

    def skill_matrix_csv(self, path, row_axis="months",
                         col_axis="terminal_month", kind=TARGET) -> None:
        """Skill-score grid versus the naive baseline, with n.a. literals."""
        rows = sorted({c.axes[row_axis] for c in self.cells})
        cols = sorted({c.axes[col_axis] for c in self.cells}, reverse=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([row_axis] + [str(c) for c in cols])
            for r in rows:
                out = [str(r)]
                for col in cols:
                    axes = {row_axis: r, col_axis: col}
                    try:
                        cell = self.cell(kind, **axes)
                        naive = self.cell(NAIVE, **axes)
                    except KeyError:
                        out.append(NA)
                        continue
                    if cell.status != "ok" or naive.status != "ok":
                        out.append(NA)
                    else:
                        skill = 100.0 * (cell.rmse / naive.rmse - 1.0)
                        out.append(f"{skill:.1f}%")
                writer.writerow(out)


def _axis_str(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _axis_value(s: str):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


# ---------------------------------------------------------------------------
# Shared evaluation machinery


def _channel_subset(ts: TimeSeries, names) -> TimeSeries:
    return ts.with_channels({n: ts.channels[n] for n in names},
                            {n: ts.units[n] for n in names})


def _scaled_windows(scaled: TimeSeries, start, end, multivariate: bool,
                    utc_offset: int) -> WindowSet:
    """Windows over [start, end) with the preceding day available as lags."""
    lead = np.datetime64(start, "s") - np.timedelta64(86400, "s")
    span = scaled.slice_time(start=lead, end=end)
    pv = _channel_subset(span, [PV_CHANNEL])
    cov = None
    if multivariate:
        weather = [n for n in WEATHER_CHANNELS if n in span.channels]
        if not weather:
            raise DataError("multivariate run requested but no weather channels")
        cov = _channel_subset(span, weather)
    return build_windows(pv, cov, utc_offset_hours=utc_offset)


def _evaluate_on_windows(params, config: ModelConfig,
                         windows: WindowSet) -> MetricsReport:
    X, Y = windows.as_arrays()
    pred = model_forward(params, config, X, mode="infer")
    return compute_metrics(pred, Y)


def naive_metrics_from_windows(windows: WindowSet) -> MetricsReport:
    """Persistence baseline on the same forecast days as the model.

    The PV column of each sample's inputs is exactly the previous day's
    observed (scaled) output, which is the naive seasonal forecast.
    """
    X, Y = windows.as_arrays()
    return compute_metrics(X[:, :, 0], Y)


def _train_windows_for_months(scaled_pretest: TimeSeries, terminal_month,
                              m: int, multivariate: bool, utc_offset: int):
    """80/20-split window sets for an m-month training span; None if m==0."""
    span = truncate_to_months(scaled_pretest, terminal_month, m)
    if m == 0:
        return None, None
    train, val = split_train_validation(span)
    train_w = _scaled_windows_no_lead(train, multivariate, utc_offset)
    val_w = _scaled_windows_no_lead(val, multivariate, utc_offset)
    if len(train_w) == 0 or len(val_w) == 0:
        raise DataError("training span too gappy to produce windows")
    return train_w, val_w


def _scaled_windows_no_lead(scaled: TimeSeries, multivariate: bool,
                            utc_offset: int) -> WindowSet:
    pv = _channel_subset(scaled, [PV_CHANNEL])
    cov = None
    if multivariate:
        weather = [n for n in WEATHER_CHANNELS if n in scaled.channels]
        cov = _channel_subset(scaled, weather)
    return build_windows(pv, cov, utc_offset_hours=utc_offset)


def _month_before(ts: np.datetime64):
    month = ts.astype("datetime64[M]") - 1
    d = month.astype("datetime64[D]").astype(object)
    return d.year, d.month


def build_source_model(source_data: TimeSeries, model_config: ModelConfig,
                       tc: TrainConfig, multivariate: bool = False,
                       utc_offset: int = 0, scaler_mode: str = "source",
                       peak_power: float | None = None):
    """Train a source model on synthetic-domain data.

    Fits the scaler on the chronological 80% train split and returns
    (params, scaler, history). The default plain source-mode scaling
    suits simulated PV whose observed maximum sits near the system
    capacity; ``scaler_mode="target"`` applies the capacity override
    instead, which keeps source and target scales compatible when the
    source series peaks well below capacity.
    """
    train, val = split_train_validation(source_data)
    scaler = fit_scaler(train, mode=scaler_mode, peak_power=peak_power)
    scaled_train = apply_scaler(train, scaler)
    scaled_val = apply_scaler(val, scaler)
    train_w = _scaled_windows_no_lead(scaled_train, multivariate, utc_offset)
    val_w = _scaled_windows_no_lead(scaled_val, multivariate, utc_offset)
    params, history = train_model(model_config, tc, train_w, val_w)
    return params, scaler, history


# ---------------------------------------------------------------------------
# Experiment runners


def run_learning_curve(site: SiteSpec, source_params, model_config: ModelConfig,
                       target_data: TimeSeries, months, *,
                       test_start, test_end=None, multivariate: bool = False,
                       train_config: TrainConfig | None = None,
                       finetune_config: TrainConfig | None = None,
                       global_seed: int = 0) -> ExperimentReport:
    """Forecast error as a function of target-data availability.

    For each m: a target model trained from scratch on the m months
    preceding the test span (m = 0 is an untrained model), a transfer
    model fine-tuned on the same months (m = 0 is direct application),
    and the naive baseline, all evaluated on the one fixed test span
    with the one fixed scaler.
    """
    test_start = np.datetime64(test_start, "s")
    if test_end is not None:
        test_end = np.datetime64(test_end, "s")
    utc_offset = site.utc_offset_hours()

    pre_test = target_data.slice_time(end=test_start)
    scaler = fit_scaler(pre_test, mode="target", peak_power=site.peak_power)
    scaled = apply_scaler(target_data, scaler)
    scaled_pretest = scaled.slice_time(end=test_start)

    test_windows = _scaled_windows(scaled, test_start, test_end,
                                   multivariate, utc_offset)
    if len(test_windows) == 0:
        raise DataError("test span yields no forecast samples")
    naive = naive_metrics_from_windows(test_windows)
    terminal = _month_before(test_start)

    report = ExperimentReport(name="learning_curve", axis_names=["months"],
                              scaler_digest=scaler.digest())
    for m in months:
        axes = {"months": int(m)}
        report.cells.append(CellResult.from_metrics(axes, NAIVE, naive))
        try:
            train_w, val_w = _train_windows_for_months(
                scaled_pretest, terminal, m, multivariate, utc_offset)
        except DataError as exc:
            report.cells.append(CellResult.unavailable(axes, TARGET, str(exc)))
            report.cells.append(CellResult.unavailable(axes, TRANSFER, str(exc)))
            continue

        tc = train_config or TrainConfig()
        ftc = finetune_config or TrainConfig.finetune_defaults(
            learning_rate=tc.learning_rate / 100.0)

        if m == 0:
            target_params = init_model(
                model_config, seed=stable_seed(global_seed, "lc", m, TARGET))
            transfer_params = source_params.copy()
        else:
            target_params, _ = train_model(
                model_config,
                dataclasses.replace(tc, seed=stable_seed(global_seed, "lc",
                                                         m, TARGET)),
                train_w, val_w)
            transfer_params, _ = finetune_model(
                source_params, model_config,
                dataclasses.replace(ftc, seed=stable_seed(global_seed, "lc",
                                                          m, TRANSFER)),
                train_w, val_w)
        report.cells.append(CellResult.from_metrics(
            axes, TARGET, _evaluate_on_windows(target_params, model_config,
                                               test_windows)))
        report.cells.append(CellResult.from_metrics(
            axes, TRANSFER, _evaluate_on_windows(transfer_params, model_config,
                                                 test_windows)))
    return report


def run_seasonality_grid(site: SiteSpec, model_config: ModelConfig,
                         target_data: TimeSeries, terminal_months, max_m: int,
                         *, test_start, test_end=None,
                         train_config: TrainConfig | None = None,
                         global_seed: int = 0) -> ExperimentReport:
    """Target-model skill as a function of the terminal training month.

    Cells are (m months of data, terminal month) pairs; months that the
    data does not cover yield n.a. cells. Rows follow the target model
    trained from scratch, mirroring the seasonality table layout.
    """
    test_start = np.datetime64(test_start, "s")
    if test_end is not None:
        test_end = np.datetime64(test_end, "s")
    utc_offset = site.utc_offset_hours()

    pre_test = target_data.slice_time(end=test_start)
    scaler = fit_scaler(pre_test, mode="target", peak_power=site.peak_power)
    scaled = apply_scaler(target_data, scaler)
    scaled_pretest = scaled.slice_time(end=test_start)

    test_windows = _scaled_windows(scaled, test_start, test_end,
                                   multivariate=False, utc_offset=utc_offset)
    naive = naive_metrics_from_windows(test_windows)
    tc = train_config or TrainConfig()

    report = ExperimentReport(name="seasonality_grid",
                              axis_names=["months", "terminal_month"],
                              scaler_digest=scaler.digest())
    for year, month in terminal_months:
        col = f"{year}-{month:02d}"
        for m in range(0, max_m + 1):
            axes = {"months": m, "terminal_month": col}
            report.cells.append(CellResult.from_metrics(axes, NAIVE, naive))
            try:
                train_w, val_w = _train_windows_for_months(
                    scaled_pretest, (year, month), m, False, utc_offset)
            except DataError as exc:
                report.cells.append(
                    CellResult.unavailable(axes, TARGET, str(exc)))
                continue
            seed = stable_seed(global_seed, "seasonality", col, m)
            if m == 0:
                params = init_model(model_config, seed=seed)
            else:
                params, _ = train_model(
                    model_config, dataclasses.replace(tc, seed=seed),
                    train_w, val_w)
            report.cells.append(CellResult.from_metrics(
                axes, TARGET,
                _evaluate_on_windows(params, model_config, test_windows)))
    return report


def run_misspecification(site: SiteSpec, model_config: ModelConfig,
                         target_data: TimeSeries, source_provider,
                         offsets_km=(0.0, 100.0, 200.0, 400.0, 800.0), *,
                         bearing: float = 125.0, multivariate: bool = False,
                         finetune_months: int = 1, test_start, test_end=None,
                         source_train_config: TrainConfig | None = None,
                         finetune_config: TrainConfig | None = None,
                         source_scaler_mode: str = "source",
                         global_seed: int = 0) -> ExperimentReport:
    """Transfer value under a source domain displaced from the true site.

    ``source_provider(offset_site)`` must return source-domain data for
    the displaced site spec (a remote fetcher or a synthetic world).
    Each offset gets a freshly trained source model, evaluated zero-shot
    and after fine-tuning against the true site's test span.
    """
    test_start = np.datetime64(test_start, "s")
    if test_end is not None:
        test_end = np.datetime64(test_end, "s")
    utc_offset = site.utc_offset_hours()

    pre_test = target_data.slice_time(end=test_start)
    scaler = fit_scaler(pre_test, mode="target", peak_power=site.peak_power)
    scaled = apply_scaler(target_data, scaler)
    scaled_pretest = scaled.slice_time(end=test_start)

    test_windows = _scaled_windows(scaled, test_start, test_end,
                                   multivariate, utc_offset)
    naive = naive_metrics_from_windows(test_windows)
    terminal = _month_before(test_start)
    stc = source_train_config or TrainConfig()

    report = ExperimentReport(name="misspecification",
                              axis_names=["offset_km"],
                              scaler_digest=scaler.digest())
    for offset in offsets_km:
        axes = {"offset_km": float(offset)}
        report.cells.append(CellResult.from_metrics(axes, NAIVE, naive))
        lat, lon = destination_point(site.latitude, site.longitude,
                                     bearing, offset)
        offset_site = dataclasses.replace(site, latitude=lat, longitude=lon)
        try:
            source_data = source_provider(offset_site)
        except FetchError as exc:
            for kind in (ZERO_SHOT, TRANSFER):
                report.cells.append(CellResult.failed(axes, kind, str(exc)))
            continue

        # Same training seed at every offset so only the domain moves.
        source_seed = stable_seed(global_seed, "misspec-source")
        source_params, _, _ = build_source_model(
            source_data, model_config,
            dataclasses.replace(stc, seed=source_seed),
            multivariate=multivariate,
            utc_offset=offset_site.utc_offset_hours(),
            scaler_mode=source_scaler_mode,
            peak_power=offset_site.peak_power)
        report.cells.append(CellResult.from_metrics(
            axes, ZERO_SHOT,
            _evaluate_on_windows(source_params, model_config, test_windows)))

        ftc = finetune_config or TrainConfig.finetune_defaults(
            learning_rate=stc.learning_rate / 100.0)
        try:
            train_w, val_w = _train_windows_for_months(
                scaled_pretest, terminal, finetune_months, multivariate,
                utc_offset)
        except DataError as exc:
            report.cells.append(CellResult.unavailable(axes, TRANSFER,
                                                       str(exc)))
            continue
        if finetune_months == 0:
            transfer_params = source_params.copy()
        else:
            transfer_params, _ = finetune_model(
                source_params, model_config,
                dataclasses.replace(ftc, seed=stable_seed(global_seed,
                                                          "misspec", offset)),
                train_w, val_w)
        report.cells.append(CellResult.from_metrics(
            axes, TRANSFER,
            _evaluate_on_windows(transfer_params, model_config, test_windows)))
    return report
