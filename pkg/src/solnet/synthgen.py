"""Deterministic synthetic PV/weather generator.

Produces physically plausible hourly series for any land-free site spec:
a clear-sky envelope from standard solar geometry, modulated by a seeded
AR(1) clearness process that also drives correlated weather channels.
Used as offline stand-ins for remote data sources in tests and
experiments.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .timeseries import (
    DIFFUSE_CHANNEL,
    DIRECT_CHANNEL,
    HUMIDITY_CHANNEL,
    PV_CHANNEL,
    SiteSpec,
    TimeSeries,
    YearRange,
    hourly_timestamps,
)

# Clear-sky attenuation at airmass 1; keeps output strictly below the
# DC capacity times (1 - loss_fraction).
_CLEARSKY_TRANSMITTANCE = 0.7
_AIRMASS_EXPONENT = 0.678

CLEARNESS_MIN = 0.2
CLEARNESS_MAX = 1.0


@dataclass(frozen=True)
class WorldSpec:
    """A reproducible synthetic world: site geometry plus a climate draw."""

    site: SiteSpec
    climate_seed: int
    years: YearRange
    clearness_mean: float = 0.7
    clearness_persistence: float = 0.95
    clearness_noise: float = 0.08

    def __post_init__(self):
        if not CLEARNESS_MIN <= self.clearness_mean <= CLEARNESS_MAX:
            raise ConfigError("clearness_mean outside [0.2, 1.0]")
        if not 0.0 <= self.clearness_persistence < 1.0:
            raise ConfigError("clearness_persistence outside [0, 1)")
        if self.clearness_noise < 0.0:
            raise ConfigError("clearness_noise must be non-negative")

    def timestamps(self) -> np.ndarray:
        return hourly_timestamps(
            f"{self.years.start_year}-01-01T00:00:00",
            f"{self.years.end_year + 1}-01-01T00:00:00",
        )


def _solar_geometry(site: SiteSpec, timestamps: np.ndarray):
    """Solar elevation and plane-of-array incidence cosine per hour.

    Solar time is approximated as UTC + longitude/15 (no equation of
    time); declination uses the Cooper formula. Angles in radians.
    """
    ts = timestamps.astype("datetime64[s]")
    day_of_year = (
        (ts.astype("datetime64[D]") - ts.astype("datetime64[Y]"))
        .astype(np.int64) + 1
    )
    hour_utc = ((ts - ts.astype("datetime64[D]"))
                .astype("timedelta64[s]").astype(np.float64)) / 3600.0

    decl = np.deg2rad(23.45) * np.sin(2 * np.pi * (284 + day_of_year) / 365.0)
    solar_time = hour_utc + site.longitude / 15.0
    hour_angle = np.deg2rad(15.0 * (solar_time - 12.0))

    lat = np.deg2rad(site.latitude)
    tilt = np.deg2rad(site.tilt)
    gamma = np.deg2rad(site.azimuth)  # 0 = south, east negative

    sin_elev = (np.sin(lat) * np.sin(decl)
                + np.cos(lat) * np.cos(decl) * np.cos(hour_angle))

    cos_incidence = (
        np.sin(decl) * np.sin(lat) * np.cos(tilt)
        - np.sin(decl) * np.cos(lat) * np.sin(tilt) * np.cos(gamma)
        + np.cos(decl) * np.cos(lat) * np.cos(tilt) * np.cos(hour_angle)
        + np.cos(decl) * np.sin(lat) * np.sin(tilt) * np.cos(gamma)
        * np.cos(hour_angle)
        + np.cos(decl) * np.sin(tilt) * np.sin(gamma) * np.sin(hour_angle)
    )
    return sin_elev, cos_incidence


def _attenuation(sin_elev: np.ndarray) -> np.ndarray:
    """Broadband clear-sky transmittance as a function of airmass."""
    airmass = 1.0 / np.clip(sin_elev, 1.0 / 38.0, None)
    return _CLEARSKY_TRANSMITTANCE ** (airmass ** _AIRMASS_EXPONENT)


def generate_clear_sky_pv(site: SiteSpec, timestamps) -> TimeSeries:
    """Hourly clear-sky PV power (kW) for the given site geometry."""
    timestamps = np.asarray(timestamps, dtype="datetime64[s]")
    sin_elev, cos_inc = _solar_geometry(site, timestamps)
    daylight = sin_elev > 0.0
    power = (site.peak_power * (1.0 - site.loss_fraction)
             * np.maximum(0.0, cos_inc) * _attenuation(sin_elev))
    power = np.where(daylight, power, 0.0)
    return TimeSeries(timestamps, {PV_CHANNEL: power}, {PV_CHANNEL: "kW"})


def _clearness_process(world: WorldSpec, n: int) -> np.ndarray:
    """Seeded AR(1) clearness index clamped to [0.2, 1.0]."""
    rng = np.random.default_rng(world.climate_seed)
    k = np.empty(n)
    mean, rho, sigma = (world.clearness_mean, world.clearness_persistence,
                        world.clearness_noise)
    noise = rng.normal(0.0, sigma, size=n)
    prev = mean
    for t in range(n):
        prev = mean + rho * (prev - mean) + noise[t]
        prev = min(max(prev, CLEARNESS_MIN), CLEARNESS_MAX)
        k[t] = prev
    return k


def generate_weather_scenario(world: WorldSpec) -> TimeSeries:
    """PV plus correlated weather channels for one synthetic world.

    PV is the clear-sky envelope scaled by the clearness index; direct
    radiation tracks clearness, diffuse tracks cloudiness during
    daylight, humidity is anti-correlated with clearness.
    """
    timestamps = world.timestamps()
    clear_sky = generate_clear_sky_pv(world.site, timestamps)
    envelope = clear_sky.values(PV_CHANNEL)
    sin_elev, _ = _solar_geometry(world.site, timestamps)
    daylight = (sin_elev > 0.0).astype(np.float64)

    k = _clearness_process(world, timestamps.size)
    frac = (k - CLEARNESS_MIN) / (CLEARNESS_MAX - CLEARNESS_MIN)

    pv = envelope * k
    direct = 900.0 * frac * np.maximum(0.0, sin_elev) * daylight
    diffuse = 350.0 * (1.0 - frac) * np.maximum(0.0, sin_elev) * daylight
    humidity = 100.0 - 80.0 * frac

    return TimeSeries(
        timestamps,
        {
            PV_CHANNEL: pv,
            HUMIDITY_CHANNEL: humidity,
            DIRECT_CHANNEL: direct,
            DIFFUSE_CHANNEL: diffuse,
        },
        {
            PV_CHANNEL: "kW",
            HUMIDITY_CHANNEL: "%",
            DIRECT_CHANNEL: "W/m²",
            DIFFUSE_CHANNEL: "W/m²",
        },
    )


def write_pv_csv(ts: TimeSeries, path) -> None:
    """Emit a PV series in the schema accepted by ingest.load_pv_csv."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "power_kw"])
        pv = ts.values(PV_CHANNEL)
        for t, p, ok in zip(ts.timestamps, pv, ts.gap_mask):
            writer.writerow([str(t), repr(float(p)) if ok else ""])


def write_weather_forecast_csv(ts: TimeSeries, path) -> None:
    """Emit weather channels as 00:00-referenced day-ahead forecast rows.

    Matches the schema of ingest.load_weather_forecast_csv, so synthetic
    weather can flow through the same pipeline as archived forecasts.
    """
    days = ts.timestamps.astype("datetime64[D]")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["forecast_reference_time", "valid_time",
                         "relative_humidity", "direct_radiation",
                         "diffuse_radiation"])
        for idx in range(len(ts)):
            if not ts.gap_mask[idx]:
                continue
            ref = str(days[idx]) + "T00:00:00"
            writer.writerow([
                ref,
                str(ts.timestamps[idx]),
                repr(float(ts.values(HUMIDITY_CHANNEL)[idx])),
                repr(float(ts.values(DIRECT_CHANNEL)[idx])),
                repr(float(ts.values(DIFFUSE_CHANNEL)[idx])),
            ])
