"""Pre-processing: resampling, splits, scaling, encoding and windows."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solnet import (
    SplitSpec,
    TimeSeries,
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
from solnet.errors import ConfigError, DataError
from solnet.series import PEAK_POWER_FACTOR, ScalerState
from solnet.timeseries import PV_CHANNEL

from conftest import make_pv_series


def quarter_series(start, values, gap_mask=None):
    ts = (np.datetime64(start, "s")
          + np.arange(len(values)) * np.timedelta64(900, "s"))
    return TimeSeries(ts, {PV_CHANNEL: np.asarray(values, np.float64)},
                      {PV_CHANNEL: "kW"}, gap_mask=gap_mask,
                      resolution_minutes=15)


class TestResample:
    def test_mean_of_four_quarters(self):
        ts = quarter_series("2019-01-01T12:00:00", [1.0, 1.0, 3.0, 3.0])
        hourly = resample_hourly(ts)
        assert len(hourly) == 1
        assert hourly.values(PV_CHANNEL)[0] == 2.0
        assert hourly.gap_mask[0]

    def test_hour_with_two_valid_quarters_is_gap(self):
        ts = quarter_series("2019-01-01T12:00:00", [2.0, 0.0, 0.0, 2.0],
                            gap_mask=[True, False, False, True])
        hourly = resample_hourly(ts)
        assert len(hourly) == 1
        assert not hourly.gap_mask[0]

    def test_three_valid_quarters_average_only_valid(self):
        ts = quarter_series("2019-01-01T12:00:00", [1.0, 2.0, 3.0, 9.9],
                            gap_mask=[True, True, True, False])
        hourly = resample_hourly(ts)
        assert hourly.gap_mask[0]
        assert hourly.values(PV_CHANNEL)[0] == pytest.approx(2.0)

    def test_hourly_input_rejected(self):
        series = make_pv_series("2019-01-01T00:00:00", 4)
        with pytest.raises(ConfigError, match="15-min"):
            resample_hourly(series)

    def test_mean_law_on_random_gapfree_day(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(0.0, 2.0, 96)
        hourly = resample_hourly(quarter_series("2019-01-01T00:00:00", values))
        assert len(hourly) == 24
        expected = values.reshape(24, 4).mean(axis=1)
        np.testing.assert_array_equal(hourly.values(PV_CHANNEL), expected)


class TestSplits:
    def test_three_way_split_partitions_timestamps(self):
        series = make_pv_series("2018-01-01T00:00:00", 24 * 730)
        train, val, test = chronological_split(series, SplitSpec())
        stamps = np.concatenate([train.timestamps, val.timestamps,
                                 test.timestamps])
        assert np.array_equal(stamps, series.timestamps)
        assert train.timestamps[-1] < val.timestamps[0]
        assert val.timestamps[-1] < test.timestamps[0]

    def test_test_span_is_trailing_year(self):
        series = make_pv_series("2018-01-01T00:00:00", 24 * 730)
        _, _, test = chronological_split(series, SplitSpec())
        days = np.unique(test.timestamps.astype("datetime64[D]"))
        assert days.size == 365

    def test_boundaries_fall_on_day_starts(self):
        series = make_pv_series("2018-01-01T00:00:00", 24 * 730)
        train, val, test = chronological_split(series, SplitSpec())
        for part in (val, test):
            first = part.timestamps[0]
            assert first == first.astype("datetime64[D]").astype("datetime64[s]")

    def test_one_year_only_rejected(self):
        series = make_pv_series("2019-01-01T00:00:00", 24 * 365)
        with pytest.raises(DataError):
            chronological_split(series, SplitSpec())

    def test_80_20_split_of_three_months_gives_18_day_validation(self):
        # Oct 1 .. Dec 31 is 92 days; 20% of that is the last ~18 days
        series = make_pv_series("2019-10-01T00:00:00", 24 * 92)
        train, val = split_train_validation(series)
        val_days = np.unique(val.timestamps.astype("datetime64[D]"))
        assert val_days.size == 18
        assert val.timestamps[0] == np.datetime64("2019-12-14T00:00:00", "s")

    def test_split_disjoint_and_exhaustive(self):
        series = make_pv_series("2019-01-01T00:00:00", 24 * 10)
        train, val = split_train_validation(series)
        joined = np.concatenate([train.timestamps, val.timestamps])
        assert np.array_equal(joined, series.timestamps)


class TestTruncateToMonths:
    def test_three_months_ending_december(self, target_series):
        span = truncate_to_months(target_series, (2019, 12), 3)
        months = np.unique(span.timestamps.astype("datetime64[M]"))
        assert [str(m) for m in months] == ["2019-10", "2019-11", "2019-12"]

    def test_zero_months_is_empty(self, target_series):
        span = truncate_to_months(target_series, (2019, 12), 0)
        assert len(span) == 0

    def test_missing_months_listed(self, target_series):
        with pytest.raises(DataError, match="2018-12"):
            truncate_to_months(target_series, (2019, 2), 3)

    def test_year_boundary_span(self, target_series):
        span = truncate_to_months(target_series, (2020, 1), 2)
        months = np.unique(span.timestamps.astype("datetime64[M]"))
        assert [str(m) for m in months] == ["2019-12", "2020-01"]


class TestScaler:
    def test_source_mode_plain_min_max(self):
        series = make_pv_series("2019-01-01T00:00:00", 3,
                                values=[0.0, 2.0, 4.0])
        state = fit_scaler(series, mode="source")
        b = state.bounds[PV_CHANNEL]
        assert (b.x_min, b.x_max, b.overridden) == (0.0, 4.0, False)
        scaled = apply_scaler(series, state)
        assert scaled.values(PV_CHANNEL)[1] == 0.5

    def test_target_override_binds(self):
        series = make_pv_series("2019-01-01T00:00:00", 3,
                                values=[0.0, 1.0, 1.9])
        state = fit_scaler(series, mode="target", peak_power=2.5)
        b = state.bounds[PV_CHANNEL]
        assert b.x_max == pytest.approx(2.15)
        assert b.overridden

    def test_target_override_not_binding(self):
        series = make_pv_series("2019-01-01T00:00:00", 3,
                                values=[0.0, 1.0, 2.4])
        state = fit_scaler(series, mode="target", peak_power=2.5)
        b = state.bounds[PV_CHANNEL]
        assert b.x_max == 2.4
        assert not b.overridden

    def test_round_trip_error_below_1e12(self):
        rng = np.random.default_rng(11)
        values = rng.uniform(0.0, 2.4, 1000)
        series = make_pv_series("2019-01-01T00:00:00", 1000, values=values)
        state = fit_scaler(series, mode="target", peak_power=2.5)
        back = invert_scaler(apply_scaler(series, state), state)
        assert np.max(np.abs(back.values(PV_CHANNEL) - values)) < 1e-12

    def test_endpoints_map_to_zero_and_one(self):
        series = make_pv_series("2019-01-01T00:00:00", 2, values=[0.5, 4.0])
        scaled = apply_scaler(series, fit_scaler(series))
        np.testing.assert_array_equal(scaled.values(PV_CHANNEL), [0.0, 1.0])

    def test_constant_channel_named_in_error(self):
        series = make_pv_series("2019-01-01T00:00:00", 4,
                                values=[1.0, 1.0, 1.0, 1.0])
        with pytest.raises(DataError, match=PV_CHANNEL):
            fit_scaler(series)

    def test_unfitted_channel_rejected(self):
        series = make_pv_series("2019-01-01T00:00:00", 3,
                                values=[0.0, 1.0, 2.0])
        other = series.with_channels({"aux": np.arange(3.0)}, {"aux": "%"})
        with pytest.raises(ConfigError, match="aux"):
            apply_scaler(other, fit_scaler(series))

    def test_values_at_most_086_peak_never_exceed_one(self):
        values = np.linspace(0.0, PEAK_POWER_FACTOR * 2.5, 50)
        series = make_pv_series("2019-01-01T00:00:00", 50, values=values)
        state = fit_scaler(series, mode="target", peak_power=2.5)
        assert np.all(apply_scaler(series, state).values(PV_CHANNEL) <= 1.0)

    def test_state_dict_round_trip_preserves_digest(self):
        series = make_pv_series("2019-01-01T00:00:00", 3,
                                values=[0.0, 1.0, 1.9])
        state = fit_scaler(series, mode="target", peak_power=2.5)
        clone = ScalerState.from_dict(state.to_dict())
        assert clone.digest() == state.digest()

    @given(st.floats(0.0, 2.0).map(lambda x: round(x, 6)),
           st.floats(0.0, 2.0).map(lambda x: round(x, 6)))
    @settings(max_examples=50, deadline=None)
    def test_monotonicity(self, x1, x2):
        series = make_pv_series("2019-01-01T00:00:00", 2, values=[0.0, 2.5])
        state = fit_scaler(series)
        b = state.bounds[PV_CHANNEL]

        def f(x):
            return (x - b.x_min) / (b.x_max - b.x_min)

        if x1 < x2:
            assert f(x1) < f(x2)
        elif x1 > x2:
            assert f(x1) > f(x2)


class TestHourEncoding:
    @pytest.mark.parametrize("hour,expected", [
        (0, (0.0, 1.0)),
        (6, (1.0, 0.0)),
        (12, (0.0, -1.0)),
    ])
    def test_cardinal_hours(self, hour, expected):
        ts = np.array([f"2019-01-01T{hour:02d}:00:00"], dtype="datetime64[s]")
        sin_h, cos_h = encode_hour_cyclical(ts)
        assert sin_h[0] == pytest.approx(expected[0], abs=1e-12)
        assert cos_h[0] == pytest.approx(expected[1], abs=1e-12)

    def test_unit_circle_identity(self):
        ts = (np.datetime64("2019-01-01T00:00:00", "s")
              + np.arange(240) * np.timedelta64(3600, "s"))
        sin_h, cos_h = encode_hour_cyclical(ts, utc_offset_hours=5)
        np.testing.assert_allclose(sin_h ** 2 + cos_h ** 2, 1.0, atol=1e-12)

    def test_utc_offset_shifts_local_hour(self):
        ts = np.array(["2019-01-01T23:00:00"], dtype="datetime64[s]")
        sin_h, cos_h = encode_hour_cyclical(ts, utc_offset_hours=1)
        assert sin_h[0] == pytest.approx(0.0, abs=1e-12)
        assert cos_h[0] == pytest.approx(1.0, abs=1e-12)


class TestWindows:
    def test_48_hours_gives_one_sample(self, two_day_series):
        windows = build_windows(two_day_series)
        assert len(windows) == 1
        assert windows.dropped == 0
        sample = windows.samples[0]
        assert sample.inputs.shape == (24, 3)
        assert sample.target.shape == (24,)
        np.testing.assert_array_equal(
            sample.inputs[:, 0], two_day_series.values(PV_CHANNEL)[:24])
        np.testing.assert_array_equal(
            sample.target, two_day_series.values(PV_CHANNEL)[24:])

    def test_72_hours_gives_two_samples(self):
        series = make_pv_series("2019-06-01T00:00:00", 72)
        assert len(build_windows(series)) == 2

    def test_gap_drops_sample_and_counts_it(self):
        mask = np.ones(48, dtype=bool)
        mask[30] = False
        series = make_pv_series("2019-06-01T00:00:00", 48, gap_mask=mask)
        windows = build_windows(series)
        assert len(windows) == 0
        assert windows.dropped == 1

    def test_gap_only_drops_touching_samples(self):
        mask = np.ones(96, dtype=bool)
        mask[50] = False
        series = make_pv_series("2019-06-01T00:00:00", 96, gap_mask=mask)
        windows = build_windows(series)
        # hour 50 sits in day 3 (targets of window 2, inputs of window 3)
        assert len(windows) == 1
        assert windows.dropped == 2

    def test_short_series_rejected(self):
        series = make_pv_series("2019-06-01T00:00:00", 47)
        with pytest.raises(DataError, match="short"):
            build_windows(series)

    def test_no_leakage_in_any_sample(self, target_series):
        pv = target_series.with_channels(
            {PV_CHANNEL: target_series.values(PV_CHANNEL)},
            {PV_CHANNEL: "kW"})
        windows = build_windows(pv)
        assert len(windows) > 300
        step = np.timedelta64(3600, "s")
        for sample in windows.samples:
            day_start = sample.forecast_date.astype("datetime64[s]")
            # inputs are the 24 hours before local midnight of forecast_date
            assert day_start - 24 * step >= pv.timestamps[0]

    def test_multivariate_features_align_with_forecast_hours(self, two_day_series):
        from solnet.timeseries import HUMIDITY_CHANNEL
        aux = np.arange(48, dtype=np.float64)
        cov = two_day_series.with_channels({HUMIDITY_CHANNEL: aux},
                                           {HUMIDITY_CHANNEL: "%"})
        windows = build_windows(two_day_series, cov)
        sample = windows.samples[0]
        assert sample.inputs.shape == (24, 4)
        # covariate column carries the weather of the forecast hours 24..47
        np.testing.assert_array_equal(sample.inputs[:, 3], aux[24:])

    def test_utc_offset_moves_window_reference(self):
        # 72 hours starting at 23:00 UTC; with offset +1 local midnights
        # are at 23:00 UTC so the first full window starts 24 h later
        series = make_pv_series("2019-06-01T23:00:00", 72)
        windows = build_windows(series, utc_offset_hours=1)
        assert len(windows) == 2
        assert str(windows.samples[0].forecast_date) == "2019-06-03"
