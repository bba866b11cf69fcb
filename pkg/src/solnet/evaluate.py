"""Metrics, the naive seasonal baseline, skill scores and geodesy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .timeseries import PV_CHANNEL, TimeSeries

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class MetricsReport:
    """RMSE / MAE / MBE on scaled values.

    MBE is mean(prediction - actual): positive means over-forecasting.
    """

    rmse: float
    mae: float
    mbe: float
    n: int


def compute_metrics(pred, actual) -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    actual = np.asarray(actual, dtype=np.float64).ravel()
    if pred.size != actual.size:
        raise ConfigError(f"length mismatch: {pred.size} vs {actual.size}")
    if pred.size == 0:
        raise ConfigError("cannot compute metrics on empty input")
    diff = pred - actual
    return MetricsReport(
        rmse=float(np.sqrt(np.mean(diff * diff))),
        mae=float(np.mean(np.abs(diff))),
        mbe=float(np.mean(diff)),
        n=pred.size,
    )


def skill_score(model_rmse: float, baseline_rmse: float) -> float:
    """Percentage RMSE difference versus a baseline; negative is better."""
    if baseline_rmse <= 0:
        raise ConfigError("baseline RMSE must be strictly positive")
    return 100.0 * (model_rmse / baseline_rmse - 1.0)


def naive_seasonal_forecast(history: TimeSeries, day) -> np.ndarray:
    """Persistence forecast: each hour copies the same hour of day - 1."""
    day = np.datetime64(day, "D")
    prev_start = (day - 1).astype("datetime64[s]")
    prev_end = day.astype("datetime64[s]")
    sel = (history.timestamps >= prev_start) & (history.timestamps < prev_end)
    if int(sel.sum()) != 24:
        raise DataError(f"previous day {day - 1} is not fully present")
    mask = history.gap_mask[sel]
    if not np.all(mask):
        hour = int(np.flatnonzero(~mask)[0])
        raise DataError(f"previous day {day - 1} has a gap at hour {hour:02d}")
    return history.values(PV_CHANNEL)[sel].copy()


def destination_point(latitude: float, longitude: float, bearing: float,
                      distance_km: float):
    """Great-circle destination on a spherical earth (R = 6371 km)."""
    if not -90.0 <= latitude <= 90.0 or not -180.0 <= longitude <= 180.0:
        raise ConfigError("invalid origin coordinates")
    if distance_km < 0:
        raise ConfigError("distance must be non-negative")
    lat1 = np.deg2rad(latitude)
    lon1 = np.deg2rad(longitude)
    theta = np.deg2rad(bearing)
    delta = distance_km / EARTH_RADIUS_KM

    lat2 = np.arcsin(np.sin(lat1) * np.cos(delta)
                     + np.cos(lat1) * np.sin(delta) * np.cos(theta))
    lon2 = lon1 + np.arctan2(
        np.sin(theta) * np.sin(delta) * np.cos(lat1),
        np.cos(delta) - np.sin(lat1) * np.sin(lat2))
    lon2 = (lon2 + np.pi) % (2.0 * np.pi) - np.pi
    return float(np.rad2deg(lat2)), float(np.rad2deg(lon2))


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance between two points, spherical earth."""
    p1, p2 = np.deg2rad(lat1), np.deg2rad(lat2)
    dphi = p2 - p1
    dlmb = np.deg2rad(lon2 - lon1)
    a = (np.sin(dphi / 2.0) ** 2
         + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2.0) ** 2)
    return float(2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a)))
