import numpy as np
import pytest

from hypowear.core import ChannelKind
from hypowear.eda import EdaParams, decompose_segments
from hypowear.preprocess import FilterParams, preprocess_bundle
from hypowear.synth import (
    PrevalenceOutOfBandError,
    SimConfig,
    cgm_hypo_fraction,
    simulate_cohort,
    simulate_subject,
)


def bundle_equal(a, b):
    if set(a.series) != set(b.series):
        return False
    return all(
        np.array_equal(a.series[ch].times, b.series[ch].times)
        and np.array_equal(a.series[ch].values, b.series[ch].values)
        for ch in a.series
    )


class TestSubjectSimulation:
    def test_same_seed_bit_identical(self):
        cfg = SimConfig(days=1.0)
        b1, t1 = simulate_subject(cfg, seed=5)
        b2, t2 = simulate_subject(cfg, seed=5)
        assert bundle_equal(b1, b2)
        assert t1 == t2

    def test_different_seed_differs(self):
        cfg = SimConfig(days=1.0)
        b1, _ = simulate_subject(cfg, seed=5)
        b2, _ = simulate_subject(cfg, seed=6)
        assert not bundle_equal(b1, b2)

    def test_default_cgm_sample_count(self):
        cfg = SimConfig()
        b, _ = simulate_subject(cfg, seed=1)
        assert len(b.series[ChannelKind.CGM]) == 2016  # 7 * 24 * 12

    def test_raw_channels_at_one_hz(self):
        cfg = SimConfig(days=0.5)
        b, _ = simulate_subject(cfg, seed=2)
        gsr = b.series[ChannelKind.GSR]
        assert len(gsr) == 43200
        assert np.all(np.diff(gsr.times) == 1)

    def test_ground_truth_consistency(self):
        # every CGM sample below 70 lies inside some truth event interval
        cfg = SimConfig(days=3.0)
        for seed in (3, 4, 5):
            b, truth = simulate_subject(cfg, seed=seed)
            cgm = b.series[ChannelKind.CGM]
            rel_t = (cgm.times - cfg.start_epoch_s).astype(float)
            below = rel_t[cgm.values < 70.0]
            for t in below:
                assert any(e.onset_s <= t <= e.end_s for e in truth.events)

    def test_events_ordered_disjoint_with_lead_in_range(self):
        cfg = SimConfig(days=7.0)
        _, truth = simulate_subject(cfg, seed=6)
        events = truth.events
        for e in events:
            assert 20 * 60 <= e.lead_s <= 40 * 60
            assert e.onset_s < e.nadir_time_s < e.end_s
        for prev, nxt in zip(events, events[1:]):
            assert nxt.onset_s - nxt.lead_s > prev.end_s

    def test_uncoupled_channels_independent_of_events(self):
        # with coupling disabled, GSR means inside vs outside the coupling
        # windows should win/lose about equally often across seeds
        cfg = SimConfig(days=2.0, coupling_driver_gain=1.0, coupling_hr_offset=0.0)
        inside_higher = 0
        used = 0
        for seed in range(20):
            b, truth = simulate_subject(cfg, seed=1000 + seed)
            if not truth.events:
                continue
            gsr = b.series[ChannelKind.GSR]
            rel_t = (gsr.times - cfg.start_epoch_s).astype(float)
            mask = np.zeros(rel_t.size, dtype=bool)
            for lo, hi in truth.coupling_windows():
                mask |= (rel_t >= lo) & (rel_t <= hi)
            if 0 < mask.sum() < mask.size:
                used += 1
                if gsr.values[mask].mean() > gsr.values[~mask].mean():
                    inside_higher += 1
        assert used >= 12
        # sign test at alpha ~ 0.01 would reject only outside [4, 16]
        assert 4 < inside_higher < 16


class TestCoupling:
    def test_phasic_amplitude_elevated_in_coupling_windows(self):
        # the property that makes the fusion acceptance test meaningful:
        # post-decomposition phasic amplitude inside coupling windows
        # exceeds the outside mean by >= 1.5x (median over 5 seeds)
        cfg = SimConfig(days=3.0)
        ratios = []
        for seed in range(5):
            bundle, truth = simulate_subject(cfg, seed=2000 + seed)
            if not truth.events:
                continue
            cgm = bundle.series[ChannelKind.CGM]
            grids, _ = preprocess_bundle(
                bundle.series, int(cgm.times[0]), cfg.n_cgm, FilterParams()
            )
            _, phasic, _ = decompose_segments(grids[ChannelKind.GSR], EdaParams())
            rel_t = np.arange(cfg.n_cgm) * 300.0
            mask = np.zeros(cfg.n_cgm, dtype=bool)
            for lo, hi in truth.coupling_windows():
                mask |= (rel_t >= lo) & (rel_t <= hi)
            mask &= ~phasic.missing
            outside = ~mask & ~phasic.missing
            inside_mean = np.abs(phasic.values[mask]).mean()
            outside_mean = np.abs(phasic.values[outside]).mean()
            ratios.append(inside_mean / outside_mean)
        assert len(ratios) >= 3
        assert np.median(ratios) >= 1.5


class TestCohort:
    def test_prevalence_in_band(self):
        bundles, truths, info = simulate_cohort(SimConfig(days=2.0), 4, master_seed=7)
        assert len(bundles) == 4
        assert 0.02 <= info["prevalence"] <= 0.06

    def test_first_subject_stable_under_cohort_growth(self):
        # wide band so the rate-adjustment retry never fires
        cfg = SimConfig(days=1.0, prevalence_band=(0.0, 1.0))
        solo, _, _ = simulate_cohort(cfg, 1, master_seed=9)
        cohort, _, _ = simulate_cohort(cfg, 4, master_seed=9)
        assert bundle_equal(solo[0], cohort[0])

    def test_zero_rate_out_of_band(self):
        with pytest.raises(PrevalenceOutOfBandError):
            simulate_cohort(SimConfig(days=1.0, events_per_day=0.0), 2, master_seed=1)

    def test_subject_ids_stable(self):
        bundles, _, _ = simulate_cohort(SimConfig(days=0.5), 3, master_seed=2)
        assert [b.subject_id for b in bundles] == ["syn00", "syn01", "syn02"]

    def test_hypo_fraction_helper(self):
        bundles, _, _ = simulate_cohort(SimConfig(days=1.0), 2, master_seed=3)
        frac = cgm_hypo_fraction(bundles)
        assert 0.0 <= frac <= 1.0
