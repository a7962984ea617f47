import numpy as np
import pytest

from hypowear.core import ChannelKind, GridSeries, SampleSeries
from hypowear.preprocess import (
    AggregationStat,
    CutoffAboveNyquistError,
    DegenerateVarianceError,
    FilterParams,
    aggregate_to_grid,
    butterworth_lowpass,
    estimate_sampling_hz,
    forward_fill,
    iqr_mask,
    lowpass_series,
    median_filter,
    zscore_subject,
)


def grid(values, missing=None, channel=ChannelKind.GSR):
    values = np.asarray(values, dtype=np.float64)
    if missing is None:
        missing = np.isnan(values)
    return GridSeries("s", channel, 0, values, missing)


class TestAggregate:
    def test_mean_and_median_in_one_bin(self):
        s = SampleSeries("s", ChannelKind.GSR, [10, 20, 30], [2.0, 4.0, 9.0])
        assert aggregate_to_grid(s, 0, 1, AggregationStat.MEAN).values[0] == 5.0
        assert aggregate_to_grid(s, 0, 1, AggregationStat.MEDIAN).values[0] == 4.0

    def test_empty_bin_missing(self):
        s = SampleSeries("s", ChannelKind.GSR, [10], [2.0])
        g = aggregate_to_grid(s, 0, 3)
        assert g.missing.tolist() == [False, True, True]

    def test_samples_outside_grid_dropped(self):
        s = SampleSeries("s", ChannelKind.GSR, [-5, 10, 1000], [1.0, 2.0, 3.0])
        g = aggregate_to_grid(s, 0, 2)
        assert g.values[0] == 2.0
        assert g.missing.tolist() == [False, True]

    def test_no_lookahead(self):
        t = np.arange(0, 1200, 30)
        v = np.sin(t / 100.0)
        base = aggregate_to_grid(SampleSeries("s", ChannelKind.GSR, t, v), 0, 4)
        v2 = v.copy()
        v2[t >= 600] += 100.0
        pert = aggregate_to_grid(SampleSeries("s", ChannelKind.GSR, t, v2), 0, 4)
        assert np.array_equal(base.values[:2], pert.values[:2])


class TestForwardFill:
    def test_fills_short_gap(self):
        g = grid([1.0, np.nan, np.nan, 4.0])
        out = forward_fill(g, 2)
        assert out.values.tolist() == [1.0, 1.0, 1.0, 4.0]
        assert not out.missing.any()

    def test_leading_gap_stays(self):
        out = forward_fill(grid([np.nan, 3.0]), 6)
        assert out.missing.tolist() == [True, False]

    def test_gap_longer_than_cap_stays(self):
        vals = [1.0] + [np.nan] * 7 + [2.0]
        out = forward_fill(grid(vals), 6)
        assert out.missing.sum() == 7

    def test_trailing_gap_fills(self):
        out = forward_fill(grid([1.0, np.nan, np.nan]), 6)
        assert out.values.tolist() == [1.0, 1.0, 1.0]

    def test_idempotent(self):
        g = grid([np.nan, 1.0, np.nan, np.nan, 5.0, np.nan])
        once = forward_fill(g, 1)
        twice = forward_fill(once, 1)
        assert np.array_equal(once.missing, twice.missing)
        assert np.allclose(once.observed(), twice.observed())


class TestZscore:
    def test_definition(self):
        out = zscore_subject(grid([1.0, 2.0, 3.0]))
        assert abs(out.values.mean()) < 1e-9
        assert abs(out.values.std(ddof=1) - 1.0) < 1e-9

    def test_constant_raises(self):
        with pytest.raises(DegenerateVarianceError):
            zscore_subject(grid([2.0, 2.0, 2.0]))

    def test_affine_invariance(self):
        x = np.array([0.3, 1.7, -2.0, 0.9, 4.2])
        a = zscore_subject(grid(x)).values
        b = zscore_subject(grid(3.5 * x + 11.0)).values
        assert np.allclose(a, b, atol=1e-12)

    def test_stats_mask_ignores_excluded_bins(self):
        x = np.array([1.0, 2.0, 3.0, 100.0, -50.0])
        mask = np.array([True, True, True, False, False])
        out = zscore_subject(grid(x), stats_mask=mask)
        pert = x.copy()
        pert[3:] = [9e5, -9e5]
        out2 = zscore_subject(grid(pert), stats_mask=mask)
        assert np.array_equal(out.values[:3], out2.values[:3])


def measured_gain(f_hz, fs_hz, p, n=8192, settle=4096):
    t = np.arange(n) / fs_hz
    x = np.sin(2 * np.pi * f_hz * t)
    y = butterworth_lowpass(x, fs_hz, p)
    seg = slice(settle, settle + int(round(fs_hz / f_hz)) * int((n - settle) * f_hz / fs_hz))
    ts = t[seg]
    ys = y[seg]
    a = 2.0 * np.mean(ys * np.sin(2 * np.pi * f_hz * ts))
    b = 2.0 * np.mean(ys * np.cos(2 * np.pi * f_hz * ts))
    return float(np.hypot(a, b))


class TestButterworth:
    def test_dc_gain_unity(self):
        p = FilterParams()
        y = butterworth_lowpass(np.ones(2000), 8.0, p)
        assert abs(y[-1] - 1.0) < 1e-9

    def test_cutoff_gain_is_half_power(self):
        p = FilterParams()
        gain = measured_gain(0.5, 8.0, p)
        assert abs(gain - 1 / np.sqrt(2)) / (1 / np.sqrt(2)) < 0.02

    def test_stopband_matches_analytic_magnitude(self):
        # closed-form magnitude of the prewarped bilinear design; computed
        # without touching the coefficient or filtering code
        p = FilterParams()
        fs = 8.0
        for f in (1.0, 2.0):
            ratio = np.tan(np.pi * f / fs) / np.tan(np.pi * 0.5 / fs)
            expected = 1.0 / np.sqrt(1.0 + ratio**8)
            gain = measured_gain(f, fs, p)
            assert abs(gain - expected) / expected < 0.05

    def test_passband_matches_prototype_formula(self):
        # below the cutoff the warping is negligible and the textbook
        # 1/sqrt(1+(f/fc)^8) form holds directly
        gain = measured_gain(0.25, 8.0, FilterParams())
        expected = 1.0 / np.sqrt(1.0 + (0.25 / 0.5) ** 8)
        assert abs(gain - expected) / expected < 0.05

    def test_cutoff_above_nyquist_rejected(self):
        with pytest.raises(CutoffAboveNyquistError):
            butterworth_lowpass(np.ones(10), 0.9, FilterParams())

    def test_causal_no_lookahead(self):
        p = FilterParams()
        from hypowear import rng

        x = rng.Stream(4).normal(400)
        x2 = x.copy()
        x2[300:] += 50.0
        y = butterworth_lowpass(x, 8.0, p)
        y2 = butterworth_lowpass(x2, 8.0, p)
        assert np.array_equal(y[:300], y2[:300])

    def test_zero_phase_flag_runs(self):
        p = FilterParams()
        x = np.sin(np.arange(500) * 0.1)
        y = butterworth_lowpass(x, 8.0, p, zero_phase=True)
        assert y.shape == x.shape

    def test_low_rate_series_skipped(self):
        s = SampleSeries("s", ChannelKind.GSR, np.arange(20), np.sin(np.arange(20.0)))
        out = lowpass_series(s, FilterParams())
        assert np.array_equal(out.values, s.values)
        assert estimate_sampling_hz(s) == 1.0


class TestIqrMask:
    def test_all_equal_nothing_masked(self):
        out = iqr_mask(grid([5.0] * 6))
        assert not out.missing.any()

    def test_documented_outlier_case(self):
        # sorted 1..9,100: Q1=3.25, Q3=7.75 by linear interpolation, so the
        # upper fence is 7.75 + 1.5*4.5 = 14.5 and only 100 is outside.
        vals = list(range(1, 10)) + [100.0]
        out = iqr_mask(grid(vals), k=1.5)
        assert out.missing.tolist() == [False] * 9 + [True]

    def test_value_exactly_on_fence_kept(self):
        vals = list(range(1, 10)) + [14.5]
        out = iqr_mask(grid(vals), k=1.5)
        assert not out.missing.any()


class TestMedianFilter:
    def test_monotone_interior_unchanged(self):
        vals = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
        out = median_filter(grid(vals), 3)
        assert np.array_equal(out.values[1:-1], vals[1:-1])

    def test_spike_removed(self):
        out = median_filter(grid([5.0, 5.0, 50.0, 5.0, 5.0]), 3)
        assert out.values.tolist() == [5.0] * 5

    def test_all_missing_neighborhood_stays_missing(self):
        vals = [1.0, np.nan, np.nan, np.nan, np.nan, np.nan, 1.0]
        out = median_filter(grid(vals), 3)
        assert out.missing[3]
        assert not out.missing[0]
