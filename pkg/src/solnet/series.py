"""Turning raw series into leakage-safe, scaled, windowed training data."""
from __future__ import annotations

import datetime
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .timeseries import PV_CHANNEL, WEATHER_CHANNELS, TimeSeries

PEAK_POWER_FACTOR = 0.86  # nominal DC power net of typical system losses

LAGS = 24
HORIZON = 24


# ---------------------------------------------------------------------------
# Resampling


def resample_hourly(ts: TimeSeries, min_valid_quarters: int = 3) -> TimeSeries:
    """Average quarter-hourly readings into hourly values.

    An hour with fewer than ``min_valid_quarters`` valid readings is
    masked as a gap rather than filled.
    """
    if ts.resolution_minutes != 15:
        raise ConfigError(
            f"resample_hourly expects 15-min input, got {ts.resolution_minutes}-min"
        )
    hours = ts.timestamps.astype("datetime64[h]")
    unique_hours = np.arange(hours[0], hours[-1] + np.timedelta64(1, "h"))
    idx = (hours - unique_hours[0]).astype(np.int64)
    n = unique_hours.size

    counts = np.zeros(n)
    np.add.at(counts, idx, ts.gap_mask.astype(np.float64))

    channels = {}
    for name, values in ts.channels.items():
        sums = np.zeros(n)
        np.add.at(sums, idx, np.where(ts.gap_mask, values, 0.0))
        with np.errstate(invalid="ignore", divide="ignore"):
            channels[name] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    mask = counts >= min_valid_quarters
    for name in channels:
        channels[name] = np.where(mask, channels[name], np.nan)
    return TimeSeries(unique_hours.astype("datetime64[s]"), channels, ts.units,
                      gap_mask=mask, resolution_minutes=60)


# ---------------------------------------------------------------------------
# Chronological splitting


@dataclass(frozen=True)
class SplitSpec:
    """Chronological three-way split: trailing test year, then 80/20."""

    test_years: int = 1
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.test_years < 1:
            raise ConfigError("test_years must be at least 1")


def _day_boundary(ts: np.datetime64) -> np.datetime64:
    return ts.astype("datetime64[D]").astype("datetime64[s]")


def split_train_validation(ts: TimeSeries, train_fraction: float = 0.8):
    """Split a series 80/20 in time order, at a day boundary."""
    days = np.unique(ts.timestamps.astype("datetime64[D]"))
    if days.size < 2:
        raise DataError("need at least two days to split train/validation")
    n_train = int(round(train_fraction * days.size))
    n_train = min(max(n_train, 1), days.size - 1)
    boundary = days[n_train].astype("datetime64[s]")
    return ts.slice_time(end=boundary), ts.slice_time(start=boundary)


def chronological_split(ts: TimeSeries, spec: SplitSpec = SplitSpec()):
    """Carve off the trailing test year(s), split the rest 80/20.

    Returns (train, validation, test). All boundaries fall on day
    boundaries and the three parts partition the input timestamps.
    """
    last = ts.timestamps[-1]
    end_day = _day_boundary(last) + np.timedelta64(86400, "s")
    end_dt = end_day.astype(datetime.datetime)
    test_start = np.datetime64(
        end_dt.replace(year=end_dt.year - spec.test_years), "s")
    if ts.timestamps[0] >= test_start:
        raise DataError("series does not extend beyond the requested test span")
    remainder = ts.slice_time(end=test_start)
    test = ts.slice_time(start=test_start)
    rem_days = np.unique(remainder.timestamps.astype("datetime64[D]"))
    if rem_days.size < 28:
        raise DataError(
            "insufficient data before the test span (need at least one month)")
    train, validation = split_train_validation(remainder, spec.train_fraction)
    return train, validation, test


def truncate_to_months(ts: TimeSeries, terminal_month, m: int) -> TimeSeries:
    """The m calendar months ending at terminal_month (a (year, month) pair).

    m = 0 yields an empty series (the zero-data case). Raises if any
    requested month is not covered by the input, listing the gaps.
    """
    if m < 0:
        raise ConfigError("month count must be non-negative")
    year, month = terminal_month
    if m == 0:
        return TimeSeries(ts.timestamps[:0],
                          {k: v[:0] for k, v in ts.channels.items()},
                          ts.units, gap_mask=ts.gap_mask[:0],
                          resolution_minutes=ts.resolution_minutes)

    months = []
    y, mo = year, month
    for _ in range(m):
        months.append((y, mo))
        mo -= 1
        if mo == 0:
            y, mo = y - 1, 12
    months.reverse()

    present = {(d.year, d.month)
               for d in np.unique(ts.timestamps.astype("datetime64[M]"))
               .astype(datetime.datetime)}
    missing = [f"{y}-{mo:02d}" for (y, mo) in months if (y, mo) not in present]
    if missing:
        raise DataError(f"requested months not covered: {', '.join(missing)}")

    start_y, start_m = months[0]
    start = np.datetime64(f"{start_y}-{start_m:02d}-01", "s")
    if month == 12:
        end = np.datetime64(f"{year + 1}-01-01", "s")
    else:
        end = np.datetime64(f"{year}-{month + 1:02d}-01", "s")
    return ts.slice_time(start=start, end=end)


# ---------------------------------------------------------------------------
# Scaling


@dataclass(frozen=True)
class ChannelBounds:
    x_min: float
    x_max: float
    overridden: bool = False


@dataclass
class ScalerState:
    """Per-channel min-max bounds, fitted on training data only."""

    bounds: dict = field(default_factory=dict)
    mode: str = "source"

    def digest(self) -> str:
        """Stable hash of the fitted state, for provenance records."""
        parts = [self.mode]
        for name in sorted(self.bounds):
            b = self.bounds[name]
            parts.append(f"{name}:{b.x_min!r}:{b.x_max!r}:{b.overridden}")
        return hashlib.sha256("|".join(parts).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "bounds": {
                name: {"x_min": b.x_min, "x_max": b.x_max,
                       "overridden": b.overridden}
                for name, b in self.bounds.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerState":
        return cls(
            bounds={name: ChannelBounds(v["x_min"], v["x_max"], v["overridden"])
                    for name, v in d["bounds"].items()},
            mode=d["mode"],
        )


def fit_scaler(train: TimeSeries, mode: str = "source",
               peak_power: float | None = None) -> ScalerState:
    """Fit per-channel min-max bounds on a training series.

    In target mode the PV channel's upper bound is lifted to at least
    PEAK_POWER_FACTOR times the system's nominal capacity, so sparse
    training spans scale compatibly with capacity-normalised source
    models.
    """
    if mode not in ("source", "target"):
        raise ConfigError(f"unknown scaler mode {mode!r}")
    if mode == "target" and (peak_power is None or peak_power <= 0):
        raise ConfigError("target mode requires a positive peak_power")

    bounds = {}
    for name, values in train.channels.items():
        valid = values[train.gap_mask & np.isfinite(values)]
        if valid.size == 0:
            raise DataError(f"channel {name!r} has no valid training samples")
        x_min = float(valid.min())
        x_max = float(valid.max())
        overridden = False
        if mode == "target" and name == PV_CHANNEL:
            floor = PEAK_POWER_FACTOR * peak_power
            if floor > x_max:
                x_max = floor
                overridden = True
        if x_max == x_min:
            raise DataError(f"channel {name!r} is constant (min == max)")
        bounds[name] = ChannelBounds(x_min, x_max, overridden)
    return ScalerState(bounds=bounds, mode=mode)


def apply_scaler(ts: TimeSeries, state: ScalerState) -> TimeSeries:
    channels = {}
    for name, values in ts.channels.items():
        if name not in state.bounds:
            raise ConfigError(f"channel {name!r} was not fitted")
        b = state.bounds[name]
        channels[name] = (values - b.x_min) / (b.x_max - b.x_min)
    return ts.with_channels(channels, {name: "scaled" for name in channels})


def invert_scaler(ts_scaled: TimeSeries, state: ScalerState) -> TimeSeries:
    channels = {}
    units = {}
    for name, values in ts_scaled.channels.items():
        if name not in state.bounds:
            raise ConfigError(f"channel {name!r} was not fitted")
        b = state.bounds[name]
        channels[name] = values * (b.x_max - b.x_min) + b.x_min
        units[name] = "kW" if name == PV_CHANNEL else "native"
    return ts_scaled.with_channels(channels, units)


# ---------------------------------------------------------------------------
# Hour encoding and window construction


def encode_hour_cyclical(timestamps, utc_offset_hours: int = 0):
    """Sine/cosine encoding of the local hour of day."""
    ts = np.asarray(timestamps, dtype="datetime64[s]")
    hour_utc = ((ts - ts.astype("datetime64[D]"))
                .astype("timedelta64[s]").astype(np.float64)) / 3600.0
    h = np.mod(hour_utc + utc_offset_hours, 24.0)
    angle = 2.0 * np.pi * h / 24.0
    return np.sin(angle), np.cos(angle)


@dataclass(frozen=True)
class WindowSample:
    """One forecast-day sample: 24 lagged input steps, 24 target hours."""

    inputs: np.ndarray      # (LAGS, n_features)
    target: np.ndarray      # (HORIZON,)
    forecast_date: np.datetime64


@dataclass
class WindowSet:
    samples: list
    dropped: int = 0

    def __len__(self):
        return len(self.samples)

    def feature_count(self) -> int:
        if not self.samples:
            raise DataError("window set is empty")
        return self.samples[0].inputs.shape[1]

    def as_arrays(self):
        """Stacked (X, Y) arrays for batch processing."""
        if not self.samples:
            raise DataError("window set is empty")
        x = np.stack([s.inputs for s in self.samples])
        y = np.stack([s.target for s in self.samples])
        return x, y


def build_windows(pv: TimeSeries, covariates: TimeSeries | None = None,
                  stride: int = 24, utc_offset_hours: int = 0) -> WindowSet:
    """Construct daily forecast samples from scaled hourly series.

    Each sample's inputs are the 24 hours preceding local midnight of
    the forecast day: scaled PV, cyclical hour encoding and, when
    covariates are given, the weather for the positionally aligned
    forecast hour. Samples touching masked gaps are dropped and counted.
    """
    if pv.resolution_minutes != 60:
        raise ConfigError("build_windows expects hourly input")
    if stride < 1:
        raise ConfigError("stride must be positive")
    n = len(pv)
    if n < LAGS + HORIZON:
        raise DataError(f"series of {n} hours is shorter than "
                        f"{LAGS + HORIZON} hours")

    pv_values = pv.values(PV_CHANNEL)
    valid = pv.gap_mask & np.isfinite(pv_values)
    sin_h, cos_h = encode_hour_cyclical(pv.timestamps, utc_offset_hours)
    local_hour = np.mod(
        ((pv.timestamps - pv.timestamps.astype("datetime64[D]"))
         .astype("timedelta64[s]").astype(np.int64)) // 3600
        + utc_offset_hours, 24)

    cov_arrays = None
    if covariates is not None:
        if len(covariates) != n or np.any(covariates.timestamps != pv.timestamps):
            raise DataError("covariates are not aligned with the PV series")
        cov_arrays = [covariates.values(name) for name in WEATHER_CHANNELS
                      if name in covariates.channels]
        if not cov_arrays:
            raise DataError("covariate series carries no weather channels")
        valid_cov = covariates.gap_mask & np.all(
            [np.isfinite(a) for a in cov_arrays], axis=0)

    midnights = np.flatnonzero(local_hour == 0)
    starts = midnights[(midnights >= LAGS) & (midnights + HORIZON <= n)]
    if stride != 1:
        step_days = max(stride // 24, 1)
        starts = starts[::step_days]

    samples = []
    dropped = 0
    local_dates = (pv.timestamps
                   + np.timedelta64(utc_offset_hours * 3600, "s")
                   ).astype("datetime64[D]")
    for i in starts:
        in_slice = slice(i - LAGS, i)
        out_slice = slice(i, i + HORIZON)
        ok = np.all(valid[in_slice]) and np.all(valid[out_slice])
        if ok and cov_arrays is not None:
            ok = np.all(valid_cov[out_slice])
        if not ok:
            dropped += 1
            continue
        cols = [pv_values[in_slice], sin_h[in_slice], cos_h[in_slice]]
        if cov_arrays is not None:
            cols.extend(a[out_slice] for a in cov_arrays)
        samples.append(WindowSample(
            inputs=np.column_stack(cols),
            target=pv_values[out_slice].copy(),
            forecast_date=local_dates[i],
        ))
    return WindowSet(samples=samples, dropped=dropped)
