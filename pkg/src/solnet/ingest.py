"""Data acquisition: remote PV/weather services and local CSV loaders.

All fetchers are cache-first: with a cache directory given, a previously
recorded response is re-parsed from disk byte-for-byte, so experiment
reruns never depend on the network. Live calls are throttled per host.
"""
from __future__ import annotations

import csv
import datetime
import hashlib
import json
import os
import tempfile
import threading
from urllib.parse import urlparse

import numpy as np

from .errors import (
    DataError,
    FetchError,
    LeakageError,
    NoDataForLocation,
    ResponseParseError,
)
from .timeseries import (
    DIFFUSE_CHANNEL,
    DIRECT_CHANNEL,
    HUMIDITY_CHANNEL,
    PV_CHANNEL,
    SiteSpec,
    TimeSeries,
    YearRange,
)

PVGIS_URL = "https://re.jrc.ec.europa.eu/api/v5_2/seriescalc"
OPENMETEO_URL = "https://archive-api.open-meteo.com/v1/archive"

PVGIS_FIRST_YEAR = 2005

_OPENMETEO_VARS = {
    "relative_humidity_2m": (HUMIDITY_CHANNEL, "%"),
    "direct_radiation": (DIRECT_CHANNEL, "W/m²"),
    "diffuse_radiation": (DIFFUSE_CHANNEL, "W/m²"),
}

DEFAULT_MAX_INFLIGHT = 2

_limiters: dict = {}
_limiters_lock = threading.Lock()


def _host_limiter(url: str, limit: int = DEFAULT_MAX_INFLIGHT):
    host = urlparse(url).netloc
    with _limiters_lock:
        if host not in _limiters:
            _limiters[host] = threading.BoundedSemaphore(limit)
        return _limiters[host]


def cache_key(endpoint: str, params: dict) -> str:
    """Canonical hash of a request, used as the on-disk cache file name."""
    canonical = json.dumps({"endpoint": endpoint, "params": params},
                           sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _cache_path(cache_dir, key):
    return os.path.join(cache_dir, key + ".json")


def _cache_write(cache_dir, key, payload: bytes) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    os.makedirs(cache_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, _cache_path(cache_dir, key))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _http_get(url: str, params: dict, session=None, timeout: float = 60.0):
    """GET with per-host throttling; transport failures are retryable."""
    if session is None:
        import requests
        session = requests
    with _host_limiter(url):
        try:
            return session.get(url, params=params, timeout=timeout)
        except Exception as exc:
            raise FetchError(f"request to {url} failed: {exc}",
                             retryable=True) from exc


def _fetch_bytes(url: str, params: dict, cache_dir=None, session=None):
    """Raw response bytes, from cache when available."""
    key = cache_key(url, params)
    if cache_dir is not None:
        path = _cache_path(cache_dir, key)
        if os.path.exists(path):
            with open(path, "rb") as fh:
                return fh.read()
    resp = _http_get(url, params, session=session)
    if resp.status_code >= 500:
        raise FetchError(f"{url} returned {resp.status_code}", retryable=True)
    if resp.status_code >= 400:
        text = resp.text
        lowered = text.lower()
        if "sea" in lowered or "location" in lowered:
            raise NoDataForLocation(f"no data for location: {text.strip()}")
        raise FetchError(f"{url} returned {resp.status_code}: {text.strip()}")
    payload = resp.content
    if cache_dir is not None:
        _cache_write(cache_dir, key, payload)
    return payload


# ---------------------------------------------------------------------------
# PVGIS


def pvgis_params(site: SiteSpec, years: YearRange) -> dict:
    return {
        "lat": site.latitude,
        "lon": site.longitude,
        "startyear": years.start_year,
        "endyear": years.end_year,
        "pvcalculation": 1,
        "peakpower": site.peak_power,
        "loss": site.loss_fraction * 100.0,
        "angle": site.tilt,
        "aspect": site.azimuth,
        "outputformat": "json",
    }


def _parse_pvgis_time(raw: str) -> np.datetime64:
    # PVGIS stamps records as "YYYYMMDD:HHMM", minute offsets denote the
    # sampling point within the hour; we key everything by the hour.
    try:
        dt = datetime.datetime.strptime(raw, "%Y%m%d:%H%M")
    except ValueError as exc:
        raise ResponseParseError(f"unparseable PVGIS time {raw!r}",
                                 field="time") from exc
    return np.datetime64(dt.replace(minute=0), "s")


def fetch_pvgis_series(site: SiteSpec, years: YearRange, *,
                       cache_dir=None, session=None,
                       evaluation_start_year: int | None = None) -> TimeSeries:
    """Hourly simulated PV power (kW) for a site and year range.

    ``evaluation_start_year`` is the leakage guard: a source range
    reaching into the declared evaluation period is refused outright.
    """
    if years.start_year < PVGIS_FIRST_YEAR:
        raise DataError(f"PVGIS data starts in {PVGIS_FIRST_YEAR}, "
                        f"requested {years.start_year}")
    if (evaluation_start_year is not None
            and years.end_year >= evaluation_start_year):
        raise LeakageError(
            f"source years up to {years.end_year} overlap the evaluation "
            f"period starting {evaluation_start_year}")

    payload = _fetch_bytes(PVGIS_URL, pvgis_params(site, years),
                           cache_dir=cache_dir, session=session)
    try:
        doc = json.loads(payload)
    except ValueError as exc:
        raise ResponseParseError(f"PVGIS returned invalid JSON: {exc}") from exc
    try:
        records = doc["outputs"]["hourly"]
    except (KeyError, TypeError):
        raise ResponseParseError("PVGIS response missing outputs.hourly",
                                 field="outputs.hourly")

    timestamps = np.empty(len(records), dtype="datetime64[s]")
    power = np.empty(len(records))
    for idx, rec in enumerate(records):
        timestamps[idx] = _parse_pvgis_time(rec.get("time", ""))
        try:
            power[idx] = float(rec["P"]) / 1000.0  # watts to kW
        except (KeyError, TypeError, ValueError):
            raise ResponseParseError(
                f"PVGIS record {idx} has no usable power value", field="P")
    return TimeSeries(timestamps, {PV_CHANNEL: power}, {PV_CHANNEL: "kW"})


# ---------------------------------------------------------------------------
# Open-Meteo archive


def openmeteo_params(latitude: float, longitude: float,
                     years: YearRange) -> dict:
    return {
        "latitude": latitude,
        "longitude": longitude,
        "start_date": f"{years.start_year}-01-01",
        "end_date": f"{years.end_year}-12-31",
        "hourly": ",".join(_OPENMETEO_VARS),
        "timezone": "UTC",
    }


def fetch_openmeteo_history(latitude: float, longitude: float,
                            years: YearRange, *, cache_dir=None,
                            session=None) -> TimeSeries:
    """Hourly historical humidity, direct and diffuse radiation."""
    payload = _fetch_bytes(OPENMETEO_URL,
                           openmeteo_params(latitude, longitude, years),
                           cache_dir=cache_dir, session=session)
    try:
        doc = json.loads(payload)
    except ValueError as exc:
        raise ResponseParseError(
            f"Open-Meteo returned invalid JSON: {exc}") from exc
    hourly = doc.get("hourly")
    if not isinstance(hourly, dict) or "time" not in hourly:
        raise ResponseParseError("Open-Meteo response missing hourly.time",
                                 field="hourly.time")
    timestamps = np.array(hourly["time"], dtype="datetime64[s]")

    channels = {}
    units = {}
    mask = np.ones(timestamps.size, dtype=bool)
    for var, (channel, unit) in _OPENMETEO_VARS.items():
        if var not in hourly:
            raise ResponseParseError(
                f"Open-Meteo response missing variable {var!r}", field=var)
        values = np.array([np.nan if v is None else float(v)
                           for v in hourly[var]])
        if values.size != timestamps.size:
            raise ResponseParseError(
                f"variable {var!r} length differs from time axis", field=var)
        mask &= np.isfinite(values)
        channels[channel] = values
        units[channel] = unit
    return TimeSeries(timestamps, channels, units, gap_mask=mask)


# ---------------------------------------------------------------------------
# CSV loaders


def _read_rows(path, expected_header):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty")
        if [h.strip() for h in header] != list(expected_header):
            raise DataError(
                f"{path} header {header} does not match {list(expected_header)}")
        rows = [row for row in reader if row and any(c.strip() for c in row)]
    if not rows:
        raise DataError(f"{path} contains a header but no data rows")
    return rows


def _parse_timestamp(raw: str, row_num: int) -> np.datetime64:
    try:
        return np.datetime64(raw.strip(), "s")
    except ValueError as exc:
        raise DataError(f"row {row_num}: unparseable timestamp {raw!r}") from exc


def load_pv_csv(path, site: SiteSpec) -> TimeSeries:
    """Observed PV output from a (timestamp, power_kw) CSV.

    Resolution (15-min or hourly) is inferred from the row spacing.
    Negative readings are masked as invalid, not dropped or clamped, so
    meter artifacts stay visible downstream. Missing rows become gaps.
    """
    rows = _read_rows(path, ("timestamp", "power_kw"))
    stamps = []
    values = []
    for i, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise DataError(f"row {i}: expected 2 columns, got {len(row)}")
        stamps.append(_parse_timestamp(row[0], i))
        raw = row[1].strip()
        values.append(float(raw) if raw else np.nan)
    stamps = np.array(stamps, dtype="datetime64[s]")

    diffs = np.diff(stamps).astype("timedelta64[s]").astype(np.int64)
    if np.any(diffs == 0):
        dup = stamps[1:][diffs == 0][0]
        raise DataError(f"duplicate timestamp {dup}")
    if np.any(diffs < 0):
        bad = stamps[1:][diffs < 0][0]
        raise DataError(f"rows are not sorted (offending timestamp {bad})")

    step = int(diffs.min()) if diffs.size else 3600
    if step not in (900, 3600):
        raise DataError(f"unsupported row spacing of {step} s "
                        "(need 15-min or hourly)")

    # Regularise onto a contiguous grid; absent rows are gaps.
    n = int((stamps[-1] - stamps[0]) // np.timedelta64(step, "s")) + 1
    grid = stamps[0] + np.arange(n) * np.timedelta64(step, "s")
    idx = ((stamps - stamps[0]) // np.timedelta64(step, "s")).astype(np.int64)
    if np.any((stamps - stamps[0]) % np.timedelta64(step, "s")
              != np.timedelta64(0, "s")):
        off = stamps[(stamps - stamps[0]) % np.timedelta64(step, "s")
                     != np.timedelta64(0, "s")][0]
        raise DataError(f"timestamp {off} is off the {step // 60}-min grid")

    power = np.full(n, np.nan)
    power[idx] = values
    mask = np.isfinite(power) & (power >= 0)
    return TimeSeries(grid, {PV_CHANNEL: power}, {PV_CHANNEL: "kW"},
                      gap_mask=mask, resolution_minutes=step // 60)


_FORECAST_HEADER = ("forecast_reference_time", "valid_time",
                    "relative_humidity", "direct_radiation",
                    "diffuse_radiation")


def load_weather_forecast_csv(path):
    """Day-ahead forecast weather keyed by valid time.

    Only rows whose forecast reference time is 00:00 are accepted; other
    reference slots are counted and reported. Returns (series, rejected
    row count); the series is None when no acceptable rows exist.
    """
    rows = _read_rows(path, _FORECAST_HEADER)
    accepted = {}
    rejected = 0
    for i, row in enumerate(rows, start=2):
        if len(row) != 5:
            raise DataError(f"row {i}: expected 5 columns, got {len(row)}")
        ref = _parse_timestamp(row[0], i)
        ref_second = (ref - ref.astype("datetime64[D]")) \
            .astype("timedelta64[s]").astype(int)
        if ref_second != 0:
            rejected += 1
            continue
        valid = _parse_timestamp(row[1], i)
        if valid in accepted:
            raise DataError(f"duplicate valid_time {valid}")
        try:
            accepted[valid] = tuple(float(c) for c in row[2:])
        except ValueError as exc:
            raise DataError(f"row {i}: non-numeric weather value") from exc

    if not accepted:
        return None, rejected

    stamps = np.array(sorted(accepted), dtype="datetime64[s]")
    n = int((stamps[-1] - stamps[0]) // np.timedelta64(3600, "s")) + 1
    grid = stamps[0] + np.arange(n) * np.timedelta64(3600, "s")
    idx = ((stamps - stamps[0]) // np.timedelta64(3600, "s")).astype(np.int64)

    data = np.full((n, 3), np.nan)
    data[idx] = [accepted[s] for s in stamps]
    mask = np.all(np.isfinite(data), axis=1)
    series = TimeSeries(
        grid,
        {HUMIDITY_CHANNEL: data[:, 0], DIRECT_CHANNEL: data[:, 1],
         DIFFUSE_CHANNEL: data[:, 2]},
        {HUMIDITY_CHANNEL: "%", DIRECT_CHANNEL: "W/m²",
         DIFFUSE_CHANNEL: "W/m²"},
        gap_mask=mask,
    )
    return series, rejected
