"""Shared synthetic fixtures for the test suite.

Everything here is deterministic: fixtures derive from seeded
WorldSpecs so any test can rely on bitwise-stable data.
"""
import numpy as np
import pytest

from solnet import (
    SiteSpec,
    TimeSeries,
    WorldSpec,
    YearRange,
    generate_weather_scenario,
    hourly_timestamps,
)
from solnet.timeseries import PV_CHANNEL

SITE = SiteSpec(latitude=52.0, longitude=5.0, tilt=33.0, azimuth=0.0,
                peak_power=2.5)


@pytest.fixture(scope="session")
def site():
    return SITE


@pytest.fixture(scope="session")
def source_series():
    """One synthetic source year at the reference site."""
    world = WorldSpec(site=SITE, climate_seed=101,
                      years=YearRange(2015, 2015))
    return generate_weather_scenario(world)


@pytest.fixture(scope="session")
def target_series():
    """Fourteen synthetic target months (2019-01 through 2020-02)."""
    world = WorldSpec(site=SITE, climate_seed=202,
                      years=YearRange(2019, 2020))
    full = generate_weather_scenario(world)
    return full.slice_time(end="2020-03-01T00:00:00")


def make_pv_series(start, hours, values=None, gap_mask=None):
    """Small hand-rolled hourly PV series for unit tests."""
    ts = np.datetime64(start, "s") + np.arange(hours) * np.timedelta64(3600, "s")
    if values is None:
        values = np.linspace(0.0, 1.0, hours)
    return TimeSeries(ts, {PV_CHANNEL: np.asarray(values, dtype=np.float64)},
                      {PV_CHANNEL: "kW"}, gap_mask=gap_mask)


@pytest.fixture
def two_day_series():
    """48 gap-free hours starting at midnight: exactly one window."""
    return make_pv_series("2019-06-01T00:00:00", 48)


def hourly_axis(start, hours):
    start = np.datetime64(start, "s")
    return hourly_timestamps(start, start + np.timedelta64(hours * 3600, "s"))
