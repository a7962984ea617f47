"""Raw samples to clean, aligned, normalized 5-minute grids.

Channel pipelines are fixed:

* GSR: lowpass (raw rate) -> aggregate -> iqr_mask -> forward_fill -> zscore
* HR:  aggregate -> median_filter -> forward_fill -> zscore
* CGM: aggregate (Mean) only -- labels come from CGM and are never filtered.

Every operation is a pure function of its inputs and never reads a bin
whose missing flag is set.  Causal filtering is the default; the offline
zero-phase mode is flag-selectable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.signal import lfilter

from .core import (
    ChannelKind,
    GridSeries,
    HypowearError,
    SampleSeries,
    TimeInstant,
)

log = logging.getLogger(__name__)


class DegenerateVarianceError(HypowearError):
    """z-scoring a series whose statistics window has zero variance."""


class CutoffAboveNyquistError(HypowearError):
    pass


class AggregationStat(Enum):
    MEAN = "mean"
    MEDIAN = "median"


@dataclass(frozen=True)
class FilterParams:
    butter_order: int = 4
    butter_cutoff_hz: float = 0.5
    iqr_k: float = 1.5
    median_width: int = 5
    max_ffill_gap_bins: int = 6

    def __post_init__(self):
        if self.butter_order < 1:
            raise ValueError("butter_order must be >= 1")
        if self.median_width < 3 or self.median_width % 2 == 0:
            raise ValueError("median_width must be odd and >= 3")


def aggregate_to_grid(
    s: SampleSeries,
    start: TimeInstant,
    n_bins: int,
    stat: AggregationStat = AggregationStat.MEAN,
) -> GridSeries:
    """Summarize samples per 5-minute bin; bins with no samples are missing."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    step = 300
    offsets = s.times - start
    in_range = (offsets >= 0) & (offsets < step * n_bins)
    bins = offsets[in_range] // step
    vals = s.values[in_range]
    values = np.full(n_bins, np.nan)
    missing = np.ones(n_bins, dtype=bool)
    if bins.size:
        if stat is AggregationStat.MEAN:
            sums = np.bincount(bins, weights=vals, minlength=n_bins)
            counts = np.bincount(bins, minlength=n_bins)
            present = counts > 0
            values[present] = sums[present] / counts[present]
            missing = ~present
        else:
            order = np.argsort(bins, kind="stable")
            sorted_bins = bins[order]
            sorted_vals = vals[order]
            edges = np.nonzero(np.diff(sorted_bins))[0] + 1
            starts = np.concatenate([[0], edges])
            ends = np.concatenate([edges, [sorted_bins.size]])
            for a, b in zip(starts, ends):
                i = int(sorted_bins[a])
                values[i] = float(np.median(sorted_vals[a:b]))
                missing[i] = False
    return GridSeries(s.subject_id, s.channel, start, values, missing)


def forward_fill(g: GridSeries, max_gap: int) -> GridSeries:
    """Carry the last observed value across runs of up to ``max_gap`` missing bins.

    Longer runs and leading missing bins stay missing.
    """
    values = g.values.copy()
    missing = g.missing.copy()
    last_idx = -1
    run = 0
    run_start = -1
    for i in range(g.n_bins):
        if not g.missing[i]:
            if 0 < run <= max_gap and last_idx >= 0:
                values[run_start : run_start + run] = g.values[last_idx]
                missing[run_start : run_start + run] = False
            last_idx = i
            run = 0
        else:
            if run == 0:
                run_start = i
            run += 1
    if 0 < run <= max_gap and last_idx >= 0:
        values[run_start : run_start + run] = g.values[last_idx]
        missing[run_start : run_start + run] = False
    return g.replace(values, missing)


def zscore_subject(g: GridSeries, stats_mask: np.ndarray | None = None) -> GridSeries:
    """Standardize to sample mean 0, sample sd 1 (ddof=1) per subject.

    ``stats_mask`` restricts the bins the statistics are computed from (the
    subject's training period when a temporal split applies); the transform
    is still applied to every observed bin.
    """
    observed = ~g.missing
    basis = observed if stats_mask is None else (observed & np.asarray(stats_mask, dtype=bool))
    pool = g.values[basis]
    if pool.size < 2:
        raise DegenerateVarianceError("need >= 2 observed values for z-scoring")
    mean = float(np.mean(pool))
    sd = float(np.std(pool, ddof=1))
    if sd == 0.0:
        raise DegenerateVarianceError("zero variance in statistics window")
    values = g.values.copy()
    values[observed] = (values[observed] - mean) / sd
    return g.replace(values, g.missing.copy())


def butterworth_coefficients(order: int, cutoff_hz: float, fs_hz: float):
    """Digital Butterworth low-pass (b, a) via bilinear transform with prewarping."""
    if cutoff_hz >= fs_hz / 2.0:
        raise CutoffAboveNyquistError(f"cutoff {cutoff_hz} Hz >= Nyquist {fs_hz / 2.0} Hz")
    if cutoff_hz <= 0:
        raise ValueError("cutoff must be positive")
    warped = 2.0 * fs_hz * math.tan(math.pi * cutoff_hz / fs_hz)
    k = np.arange(order)
    angles = math.pi * (2.0 * k + order + 1.0) / (2.0 * order)
    analog_poles = warped * np.exp(1j * angles)
    digital_poles = (2.0 * fs_hz + analog_poles) / (2.0 * fs_hz - analog_poles)
    a = np.real(np.poly(digital_poles))
    b = np.real(np.poly(-np.ones(order)))
    # unit gain at DC (z = 1)
    b = b * (a.sum() / b.sum())
    return b, a


def butterworth_lowpass(
    values: np.ndarray,
    fs_hz: float,
    p: FilterParams,
    zero_phase: bool = False,
) -> np.ndarray:
    """Apply the Butterworth low-pass. Causal single pass by default;
    ``zero_phase`` runs the same filter forward then backward (offline only).
    """
    b, a = butterworth_coefficients(p.butter_order, p.butter_cutoff_hz, fs_hz)
    x = np.asarray(values, dtype=np.float64)
    y = lfilter(b, a, x)
    if zero_phase:
        y = lfilter(b, a, y[::-1])[::-1]
    return y


def estimate_sampling_hz(s: SampleSeries) -> float:
    """Median sample spacing, as a rate. Series shorter than 2 samples -> 0."""
    if len(s) < 2:
        return 0.0
    dt = float(np.median(np.diff(s.times)))
    return 1.0 / dt if dt > 0 else 0.0


def lowpass_series(s: SampleSeries, p: FilterParams, zero_phase: bool = False) -> SampleSeries:
    """Low-pass a raw-rate series; skipped (and logged) when the raw rate is
    too low for the configured cutoff, which is the norm for 1 Hz wearables.
    """
    fs = estimate_sampling_hz(s)
    if fs <= 0 or p.butter_cutoff_hz >= fs / 2.0:
        log.info(
            "skipping low-pass for %s/%s: fs=%.4f Hz, cutoff=%.2f Hz >= Nyquist",
            s.subject_id,
            s.channel.value,
            fs,
            p.butter_cutoff_hz,
        )
        return s
    filtered = butterworth_lowpass(s.values, fs, p, zero_phase=zero_phase)
    return SampleSeries(s.subject_id, s.channel, s.times.copy(), filtered)


def iqr_mask(g: GridSeries, k: float = 1.5) -> GridSeries:
    """Mask values outside [Q1 - k*IQR, Q3 + k*IQR] (closed interval kept).

    Quartiles use linear interpolation of order statistics.
    """
    observed = ~g.missing
    pool = g.values[observed]
    if pool.size < 4:
        raise ValueError("iqr_mask needs >= 4 observed values")
    q1, q3 = np.percentile(pool, [25.0, 75.0], method="linear")
    spread = q3 - q1
    lo, hi = q1 - k * spread, q3 + k * spread
    out_of_fence = observed & ((g.values < lo) | (g.values > hi))
    values = g.values.copy()
    missing = g.missing.copy()
    values[out_of_fence] = np.nan
    missing[out_of_fence] = True
    return g.replace(values, missing)


def median_filter(g: GridSeries, width: int) -> GridSeries:
    """Median over each bin's width-neighborhood of observed values.

    Edges use shrunken windows; a bin whose whole neighborhood is missing
    stays missing.
    """
    if width < 3 or width % 2 == 0:
        raise ValueError("width must be odd and >= 3")
    half = width // 2
    n = g.n_bins
    values = np.full(n, np.nan)
    missing = np.ones(n, dtype=bool)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        window = g.values[lo:hi][~g.missing[lo:hi]]
        if window.size:
            values[i] = float(np.median(window))
            missing[i] = False
    return g.replace(values, missing)


@dataclass(frozen=True)
class PreprocessProvenance:
    aggregation: AggregationStat
    zero_phase: bool
    lowpass_applied: dict


def preprocess_bundle(
    series: dict[ChannelKind, SampleSeries],
    start: TimeInstant,
    n_bins: int,
    params: FilterParams,
    stat: AggregationStat = AggregationStat.MEAN,
    zero_phase: bool = False,
) -> tuple[dict[ChannelKind, GridSeries], PreprocessProvenance]:
    """Run the fixed per-channel pipelines over one subject's raw series."""
    grids: dict[ChannelKind, GridSeries] = {}
    lowpass_applied: dict[str, bool] = {}
    cgm = series.get(ChannelKind.CGM)
    if cgm is None:
        raise ValueError("bundle must include a CGM series")
    grids[ChannelKind.CGM] = aggregate_to_grid(cgm, start, n_bins, AggregationStat.MEAN)

    gsr = series.get(ChannelKind.GSR)
    if gsr is not None:
        fs = estimate_sampling_hz(gsr)
        applies = fs > 0 and params.butter_cutoff_hz < fs / 2.0
        lowpass_applied[ChannelKind.GSR.value] = applies
        g = lowpass_series(gsr, params, zero_phase=zero_phase)
        grid = aggregate_to_grid(g, start, n_bins, stat)
        if (~grid.missing).sum() >= 4:
            grid = iqr_mask(grid, params.iqr_k)
        grid = forward_fill(grid, params.max_ffill_gap_bins)
        grids[ChannelKind.GSR] = zscore_subject(grid)

    hr = series.get(ChannelKind.HR)
    if hr is not None:
        grid = aggregate_to_grid(hr, start, n_bins, stat)
        grid = median_filter(grid, params.median_width)
        grid = forward_fill(grid, params.max_ffill_gap_bins)
        grids[ChannelKind.HR] = zscore_subject(grid)

    return grids, PreprocessProvenance(stat, zero_phase, lowpass_applied)
