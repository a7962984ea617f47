"""Seeded synthetic cohort: physiologically coupled CGM/GSR/HR streams with
exact ground-truth hypoglycemia events.

Glucose follows an Ornstein-Uhlenbeck baseline (floored in the euglycemic
range, so values below 70 mg/dL can only come from carved excursions) with
raised-cosine descent/recovery envelopes down to a drawn nadir.  Each event
modulates the autonomic channels starting a drawn lead of 20-40 minutes
before onset: the skin-conductance-response driver rate is multiplied and
the heart-rate baseline shifted.  All numeric defaults are tuned so the
pooled hypo-window prevalence of the default cohort lands in the
configured band around four percent; detection difficulty is a knob, not a
physiological claim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import ChannelKind, HypowearError, SampleSeries
from .ingest import BundleSource, SubjectBundle
from .rng import Stream, derive_seed


class PrevalenceOutOfBandError(HypowearError):
    pass


@dataclass(frozen=True)
class SimConfig:
    days: float = 7.0
    start_epoch_s: int = 1_622_505_600  # 2021-06-01T00:00:00Z
    cgm_step_s: int = 300
    raw_step_s: int = 1

    glucose_mean: float = 120.0
    glucose_reversion_per_min: float = 0.02
    glucose_noise: float = 1.5  # mg/dL per sqrt(minute)
    glucose_floor: float = 80.0  # baseline floor outside events

    events_per_day: float = 1.8  # calibrated to the prevalence band
    nadir_range: tuple = (50.0, 65.0)
    descent_range_min: tuple = (30.0, 60.0)
    recovery_range_min: tuple = (30.0, 90.0)
    lead_range_min: tuple = (20.0, 40.0)
    coupling_driver_gain: float = 3.0
    coupling_hr_offset: float = 8.0

    scr_rate_per_min: float = 0.5
    scr_amp_range: tuple = (0.1, 0.6)
    scr_tau1_s: float = 10.0
    scr_tau2_s: float = 1.0
    tonic_base_us: float = 2.0
    tonic_sigma_per_step: float = 0.02  # per 5-minute grid step
    gsr_noise_sd: float = 0.05

    hr_base: float = 65.0
    hr_circadian_amp: float = 7.0
    hr_noise_sd: float = 3.0
    activity_bursts_per_day: float = 4.0
    activity_dur_range_min: tuple = (10.0, 30.0)
    activity_amp_range: tuple = (10.0, 25.0)

    prevalence_band: tuple = (0.02, 0.06)

    def __post_init__(self):
        for name in ("events_per_day", "scr_rate_per_min", "activity_bursts_per_day"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.days <= 0:
            raise ValueError("days must be positive")

    @property
    def n_cgm(self) -> int:
        return int(round(self.days * 86400.0 / self.cgm_step_s))

    @property
    def n_raw(self) -> int:
        return int(round(self.days * 86400.0 / self.raw_step_s))


@dataclass(frozen=True)
class SimEvent:
    onset_s: float
    nadir_time_s: float
    end_s: float
    nadir_mg_dl: float
    lead_s: float


@dataclass(frozen=True)
class SimTruth:
    subject_id: str
    events: tuple

    def coupling_windows(self):
        return [(e.onset_s - e.lead_s, e.end_s) for e in self.events]


def _uniform_in(stream: Stream, lo: float, hi: float) -> float:
    return lo + (hi - lo) * float(stream.uniform(1)[0])


def _draw_events(cfg: SimConfig, stream: Stream) -> tuple:
    total_s = cfg.days * 86400.0
    n = stream.poisson(cfg.events_per_day * cfg.days)
    candidates = []
    for _ in range(n):
        onset = _uniform_in(stream, 0.0, total_s)
        descent = 60.0 * _uniform_in(stream, *cfg.descent_range_min)
        recovery = 60.0 * _uniform_in(stream, *cfg.recovery_range_min)
        nadir = _uniform_in(stream, *cfg.nadir_range)
        lead = 60.0 * _uniform_in(stream, *cfg.lead_range_min)
        end = onset + descent + recovery
        if end >= total_s or onset - lead <= 0:
            continue
        candidates.append(SimEvent(onset, onset + descent, end, nadir, lead))
    candidates.sort(key=lambda e: e.onset_s)
    events = []
    for e in candidates:
        # keep coupling windows of consecutive events disjoint
        if events and e.onset_s - e.lead_s <= events[-1].end_s + 300.0:
            continue
        events.append(e)
    return tuple(events)


def _glucose_series(cfg: SimConfig, stream: Stream, events: tuple) -> np.ndarray:
    n = cfg.n_cgm
    step_min = cfg.cgm_step_s / 60.0
    theta = cfg.glucose_reversion_per_min
    decay = math.exp(-theta * step_min)
    step_sd = cfg.glucose_noise * math.sqrt((1.0 - decay * decay) / (2.0 * theta))
    noise = stream.normal(n, sd=step_sd)
    base = np.empty(n)
    level = cfg.glucose_mean
    for i in range(n):
        level = cfg.glucose_mean + (level - cfg.glucose_mean) * decay + noise[i]
        base[i] = level
    base = np.maximum(base, cfg.glucose_floor)

    glucose = base.copy()
    t = np.arange(n, dtype=np.float64) * cfg.cgm_step_s
    for e in events:
        in_descent = (t >= e.onset_s) & (t < e.nadir_time_s)
        in_recovery = (t >= e.nadir_time_s) & (t <= e.end_s)
        s = np.zeros(n)
        descent_len = e.nadir_time_s - e.onset_s
        recovery_len = e.end_s - e.nadir_time_s
        s[in_descent] = 0.5 * (1.0 - np.cos(np.pi * (t[in_descent] - e.onset_s) / descent_len))
        s[in_recovery] = 0.5 * (
            1.0 + np.cos(np.pi * (t[in_recovery] - e.nadir_time_s) / recovery_len)
        )
        mask = in_descent | in_recovery
        glucose[mask] = base[mask] * (1.0 - s[mask]) + e.nadir_mg_dl * s[mask]
    return glucose


def _coupling_mask(cfg: SimConfig, events: tuple, n: int, step_s: float) -> np.ndarray:
    t = np.arange(n, dtype=np.float64) * step_s
    mask = np.zeros(n, dtype=bool)
    for e in events:
        mask |= (t >= e.onset_s - e.lead_s) & (t <= e.end_s)
    return mask


def _scr_kernel(cfg: SimConfig) -> np.ndarray:
    length = int(10.0 * cfg.scr_tau1_s / cfg.raw_step_s) + 1
    k = np.arange(length, dtype=np.float64) * cfg.raw_step_s
    h = np.exp(-k / cfg.scr_tau1_s) - np.exp(-k / cfg.scr_tau2_s)
    peak = h.max()
    return h / peak if peak > 0 else h


def _gsr_series(cfg: SimConfig, stream: Stream, events: tuple) -> np.ndarray:
    n = cfg.n_raw
    walk = np.cumsum(stream.normal(cfg.n_cgm, sd=cfg.tonic_sigma_per_step))
    tonic_grid = np.maximum(cfg.tonic_base_us + walk, 0.2)
    grid_t = np.arange(cfg.n_cgm, dtype=np.float64) * cfg.cgm_step_s
    raw_t = np.arange(n, dtype=np.float64) * cfg.raw_step_s
    tonic = np.interp(raw_t, grid_t, tonic_grid)

    rate = np.full(n, cfg.scr_rate_per_min / 60.0 * cfg.raw_step_s)
    rate[_coupling_mask(cfg, events, n, cfg.raw_step_s)] *= cfg.coupling_driver_gain
    fires = stream.uniform(n) < rate
    amps = stream.uniform(n)  # consumed either way to keep the stream aligned
    lo, hi = cfg.scr_amp_range
    driver = np.where(fires, lo + (hi - lo) * amps, 0.0)
    phasic = np.convolve(driver, _scr_kernel(cfg))[:n]

    noise = stream.normal(n, sd=cfg.gsr_noise_sd)
    return np.maximum(tonic + phasic + noise, 0.0)


def _hr_series(cfg: SimConfig, stream: Stream, events: tuple) -> np.ndarray:
    n = cfg.n_raw
    phase = _uniform_in(stream, 0.0, 2.0 * math.pi)
    t = np.arange(n, dtype=np.float64) * cfg.raw_step_s
    hr = cfg.hr_base + cfg.hr_circadian_amp * np.sin(2.0 * math.pi * t / 86400.0 + phase)

    n_bursts = stream.poisson(cfg.activity_bursts_per_day * cfg.days)
    for _ in range(n_bursts):
        onset = _uniform_in(stream, 0.0, cfg.days * 86400.0)
        dur = 60.0 * _uniform_in(stream, *cfg.activity_dur_range_min)
        amp = _uniform_in(stream, *cfg.activity_amp_range)
        hr[(t >= onset) & (t < onset + dur)] += amp

    hr[_coupling_mask(cfg, events, n, cfg.raw_step_s)] += cfg.coupling_hr_offset
    hr += stream.normal(n, sd=cfg.hr_noise_sd)
    return np.clip(hr, 35.0, 230.0)


def simulate_subject(cfg: SimConfig, seed: int, subject_id: str | None = None):
    """One subject's raw-rate GSR/HR (1 Hz), CGM (5 min), and ground truth."""
    if subject_id is None:
        subject_id = f"syn{seed & 0xFFFF:04x}"
    events = _draw_events(cfg, Stream(derive_seed(seed, "events")))
    glucose = _glucose_series(cfg, Stream(derive_seed(seed, "glucose")), events)
    gsr = _gsr_series(cfg, Stream(derive_seed(seed, "gsr")), events)
    hr = _hr_series(cfg, Stream(derive_seed(seed, "hr")), events)

    cgm_times = cfg.start_epoch_s + np.arange(cfg.n_cgm, dtype=np.int64) * cfg.cgm_step_s
    raw_times = cfg.start_epoch_s + np.arange(cfg.n_raw, dtype=np.int64) * cfg.raw_step_s
    series = {
        ChannelKind.CGM: SampleSeries(subject_id, ChannelKind.CGM, cgm_times, glucose),
        ChannelKind.GSR: SampleSeries(subject_id, ChannelKind.GSR, raw_times, gsr),
        ChannelKind.HR: SampleSeries(subject_id, ChannelKind.HR, raw_times, hr),
    }
    bundle = SubjectBundle(subject_id, series, BundleSource.SYNTHETIC)
    return bundle, SimTruth(subject_id, events)


def cgm_hypo_fraction(bundles: list) -> float:
    below = 0
    total = 0
    for b in bundles:
        values = b.series[ChannelKind.CGM].values
        below += int((values < 70.0).sum())
        total += values.size
    return below / total if total else 0.0


def simulate_cohort(cfg: SimConfig, n_subjects: int, master_seed: int):
    """Cohort with per-subject seeds split from the master seed.

    If the pooled CGM hypo fraction misses the target band, the event rate
    is rescaled toward the band center and the cohort regenerated once
    (flagged); a second miss raises PrevalenceOutOfBand.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")

    def generate(config):
        out = []
        for i in range(n_subjects):
            seed = derive_seed(master_seed, "subject", i)
            out.append(simulate_subject(config, seed, subject_id=f"syn{i:02d}"))
        return out

    lo, hi = cfg.prevalence_band
    pairs = generate(cfg)
    prevalence = cgm_hypo_fraction([b for b, _ in pairs])
    adjusted = False
    if not lo <= prevalence <= hi:
        target = 0.5 * (lo + hi)
        if prevalence > 0:
            cfg = replace(cfg, events_per_day=cfg.events_per_day * target / prevalence)
            adjusted = True
            pairs = generate(cfg)
            prevalence = cgm_hypo_fraction([b for b, _ in pairs])
        if not lo <= prevalence <= hi:
            raise PrevalenceOutOfBandError(
                f"pooled CGM hypo fraction {prevalence:.4f} outside [{lo}, {hi}]"
            )
    bundles = [b for b, _ in pairs]
    truths = [t for _, t in pairs]
    info = {"prevalence": prevalence, "rate_adjusted": adjusted, "events_per_day": cfg.events_per_day}
    return bundles, truths, info
