"""Core domain types: sites, year ranges and hourly multi-channel series."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

PV_CHANNEL = "pv_power"
HUMIDITY_CHANNEL = "relative_humidity"
DIRECT_CHANNEL = "direct_radiation"
DIFFUSE_CHANNEL = "diffuse_radiation"

WEATHER_CHANNELS = (HUMIDITY_CHANNEL, DIRECT_CHANNEL, DIFFUSE_CHANNEL)


@dataclass(frozen=True)
class SiteSpec:
    """Description of one PV system.

    Azimuth follows the PVGIS "aspect" convention: 0 = due south,
    east negative, west positive. Loaders working with compass-north
    data must convert before constructing a SiteSpec.
    """

    latitude: float
    longitude: float
    tilt: float
    azimuth: float
    peak_power: float
    loss_fraction: float = 0.14

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ConfigError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ConfigError(f"longitude {self.longitude} outside [-180, 180]")
        if not 0.0 <= self.tilt <= 90.0:
            raise ConfigError(f"tilt {self.tilt} outside [0, 90]")
        if not -180.0 <= self.azimuth <= 180.0:
            raise ConfigError(f"azimuth {self.azimuth} outside [-180, 180]")
        if not self.peak_power > 0.0:
            raise ConfigError("peak_power must be strictly positive")
        if not 0.0 <= self.loss_fraction < 1.0:
            raise ConfigError("loss_fraction must lie in [0, 1)")

    def utc_offset_hours(self) -> int:
        """Nominal civil-time offset of the site, from its longitude."""
        return int(round(self.longitude / 15.0))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SiteSpec":
        return cls(**d)


@dataclass(frozen=True)
class YearRange:
    """Inclusive range of calendar years."""

    start_year: int
    end_year: int

    def __post_init__(self):
        if self.start_year > self.end_year:
            raise ConfigError(
                f"year range start {self.start_year} after end {self.end_year}"
            )

    def years(self):
        return range(self.start_year, self.end_year + 1)


class TimeSeries:
    """Regularly spaced, UTC-stamped multi-channel series with a gap mask.

    ``timestamps`` is a datetime64[s] array, strictly increasing and
    uniformly spaced at ``resolution_minutes``. ``gap_mask`` is True where
    a timestamp carries valid data across all channels.
    """

    def __init__(self, timestamps, channels, units, gap_mask=None,
                 resolution_minutes=60):
        timestamps = np.asarray(timestamps, dtype="datetime64[s]")
        if timestamps.ndim != 1:
            raise DataError("timestamps must be a 1-D array")
        diffs = np.diff(timestamps).astype("timedelta64[s]").astype(np.int64)
        step = resolution_minutes * 60
        if np.any(diffs <= 0):
            dup = timestamps[1:][diffs <= 0][0]
            raise DataError(f"timestamps not strictly increasing at {dup}")
        if np.any(diffs != step):
            bad = timestamps[1:][diffs != step][0]
            raise DataError(
                f"timestamps not uniformly spaced at {resolution_minutes} min "
                f"(first offender {bad})"
            )

        if gap_mask is None:
            gap_mask = np.ones(timestamps.size, dtype=bool)
        gap_mask = np.asarray(gap_mask, dtype=bool)
        if gap_mask.shape != timestamps.shape:
            raise DataError("gap_mask length differs from timestamps")

        clean = {}
        for name, values in channels.items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != timestamps.shape:
                raise DataError(
                    f"channel {name!r} has length {arr.size}, "
                    f"expected {timestamps.size}"
                )
            clean[name] = arr
        if set(units) != set(clean):
            raise DataError("units must name exactly the channels present")

        if PV_CHANNEL in clean:
            pv = clean[PV_CHANNEL]
            bad = gap_mask & np.isfinite(pv) & (pv < 0)
            if np.any(bad):
                ts = timestamps[bad][0]
                raise DataError(f"negative PV power marked valid at {ts}")

        self.timestamps = timestamps
        self.channels = clean
        self.units = dict(units)
        self.gap_mask = gap_mask
        self.resolution_minutes = int(resolution_minutes)

    def __len__(self):
        return self.timestamps.size

    @property
    def channel_names(self):
        return list(self.channels)

    def values(self, name: str) -> np.ndarray:
        return self.channels[name]

    def with_channels(self, channels, units) -> "TimeSeries":
        """Same time axis and mask, different channel payload."""
        return TimeSeries(self.timestamps, channels, units,
                          gap_mask=self.gap_mask.copy(),
                          resolution_minutes=self.resolution_minutes)

    def slice_time(self, start=None, end=None) -> "TimeSeries":
        """Sub-series with start <= t < end (either bound optional)."""
        sel = np.ones(len(self), dtype=bool)
        if start is not None:
            sel &= self.timestamps >= np.datetime64(start, "s")
        if end is not None:
            sel &= self.timestamps < np.datetime64(end, "s")
        if not np.any(sel):
            raise DataError("time slice selects no samples")
        return TimeSeries(
            self.timestamps[sel],
            {k: v[sel] for k, v in self.channels.items()},
            self.units,
            gap_mask=self.gap_mask[sel],
            resolution_minutes=self.resolution_minutes,
        )

    def merge_channels(self, other: "TimeSeries") -> "TimeSeries":
        """Join channels of two series on an identical time axis.

        The merged gap mask is the conjunction of both masks.
        """
        if len(self) != len(other) or np.any(self.timestamps != other.timestamps):
            raise DataError("cannot merge series with different time axes")
        overlap = set(self.channels) & set(other.channels)
        if overlap:
            raise DataError(f"duplicate channels in merge: {sorted(overlap)}")
        channels = dict(self.channels)
        channels.update(other.channels)
        units = dict(self.units)
        units.update(other.units)
        return TimeSeries(self.timestamps, channels, units,
                          gap_mask=self.gap_mask & other.gap_mask,
                          resolution_minutes=self.resolution_minutes)


def hourly_timestamps(start, end) -> np.ndarray:
    """Hourly datetime64 axis covering start <= t < end."""
    start = np.datetime64(start, "s")
    end = np.datetime64(end, "s")
    if end <= start:
        raise ConfigError("end must be after start")
    n = int((end - start) // np.timedelta64(3600, "s"))
    return start + np.arange(n) * np.timedelta64(3600, "s")
