import numpy as np
import pytest

from hypowear.core import ChannelKind, GridSeries, Label
from hypowear.dataset import (
    InvalidGlucoseError,
    Modality,
    MissingChannelError,
    TooFewSubjectsError,
    Window,
    WindowChannel,
    assemble_batch,
    label_glucose,
    leave_one_out_plans,
    make_windows,
    split_subjects,
    window_prevalence,
)


def grids(n, cgm_values=None, subject="s"):
    def mk(channel, values):
        values = np.asarray(values, dtype=np.float64)
        return GridSeries(subject, channel, 0, values, np.isnan(values))

    cgm = mk(ChannelKind.CGM, np.full(n, 120.0) if cgm_values is None else cgm_values)
    chans = {
        WindowChannel.GSR: mk(ChannelKind.GSR, np.arange(n, dtype=float)),
        WindowChannel.HR: mk(ChannelKind.HR, np.arange(n, dtype=float) * 2),
        WindowChannel.TONIC: mk(ChannelKind.GSR, np.ones(n)),
        WindowChannel.PHASIC: mk(ChannelKind.GSR, np.zeros(n)),
    }
    return chans, cgm


class TestLabeling:
    def test_threshold_boundary(self):
        assert label_glucose(69.9) is Label.HYPO
        assert label_glucose(70.0) is Label.NORMAL
        assert label_glucose(120.0) is Label.NORMAL

    def test_invalid_glucose(self):
        for bad in (float("nan"), float("inf"), 0.0, -5.0):
            with pytest.raises(InvalidGlucoseError):
                label_glucose(bad)


class TestWindows:
    def test_exact_count_minimal(self):
        chans, cgm = grids(12)
        assert len(make_windows(chans, cgm)) == 1

    def test_count_20_bins(self):
        chans, cgm = grids(20)
        assert len(make_windows(chans, cgm)) == 9

    def test_count_formula(self):
        for n in (12, 15, 30, 47):
            for stride in (1, 2, 5):
                chans, cgm = grids(n)
                expected = (n - 12) // stride + 1
                assert len(make_windows(chans, cgm, stride=stride)) == expected

    def test_missing_label_bin_drops_window(self):
        vals = np.full(13, 120.0)
        vals[11] = np.nan
        chans, cgm = grids(13, cgm_values=vals)
        windows = make_windows(chans, cgm)
        assert [w.start_bin for w in windows] == [1]

    def test_missing_channel_bin_drops_window(self):
        chans, cgm = grids(14)
        gsr_vals = chans[WindowChannel.GSR].values.copy()
        gsr_vals[0] = np.nan
        chans[WindowChannel.GSR] = GridSeries("s", ChannelKind.GSR, 0, gsr_vals, np.isnan(gsr_vals))
        windows = make_windows(chans, cgm)
        assert [w.start_bin for w in windows] == [1, 2]

    def test_no_future_bins_read(self):
        chans, cgm = grids(20)
        base = make_windows(chans, cgm)
        w0 = next(w for w in base if w.start_bin == 0)
        # perturb everything at or past bin 12
        pert_vals = chans[WindowChannel.GSR].values.copy()
        pert_vals[12:] += 999.0
        chans2 = dict(chans)
        chans2[WindowChannel.GSR] = GridSeries("s", ChannelKind.GSR, 0, pert_vals, np.zeros(20, bool))
        cgm_vals = cgm.values.copy()
        cgm_vals[12:] += 5.0
        cgm2 = GridSeries("s", ChannelKind.CGM, 0, cgm_vals, np.zeros(20, bool))
        w0b = next(w for w in make_windows(chans2, cgm2) if w.start_bin == 0)
        for ch in w0.channels:
            assert np.array_equal(w0.channels[ch], w0b.channels[ch])
        assert w0.glucose_last == w0b.glucose_last

    def test_label_from_final_bin(self):
        vals = np.full(12, 120.0)
        vals[11] = 65.0
        chans, cgm = grids(12, cgm_values=vals)
        (w,) = make_windows(chans, cgm)
        assert w.label is Label.HYPO and w.glucose_last == 65.0

    def test_horizon_shifts_label_bin(self):
        vals = np.full(14, 120.0)
        vals[13] = 60.0
        chans, cgm = grids(14, cgm_values=vals)
        windows = make_windows(chans, cgm, horizon_bins=2)
        assert [w.start_bin for w in windows] == [0]
        assert windows[0].label is Label.HYPO

    def test_fully_missing_input_emits_nothing(self):
        vals = np.full(15, np.nan)
        chans, cgm = grids(15, cgm_values=vals)
        assert make_windows(chans, cgm) == []


class TestSplits:
    def test_sizes_ten_subjects(self):
        plan = split_subjects([f"s{i}" for i in range(10)], seed=1)
        assert (len(plan.train), len(plan.val), len(plan.test)) == (8, 1, 1)

    def test_sizes_six_subjects(self):
        plan = split_subjects([f"s{i}" for i in range(6)], seed=1)
        assert (len(plan.train), len(plan.val), len(plan.test)) == (4, 1, 1)

    def test_deterministic(self):
        ids = [f"s{i}" for i in range(12)]
        assert split_subjects(ids, seed=7) == split_subjects(ids, seed=7)
        assert split_subjects(ids, seed=7) != split_subjects(ids, seed=8)

    def test_partitions_disjoint_and_complete(self):
        ids = [f"s{i}" for i in range(11)]
        plan = split_subjects(ids, seed=3)
        assert plan.train | plan.val | plan.test == set(ids)
        assert not (plan.train & plan.val) and not (plan.train & plan.test)

    def test_too_few_subjects(self):
        with pytest.raises(TooFewSubjectsError):
            split_subjects(["a", "b"], seed=0)

    def test_stratified_spreads_prevalence(self):
        ids = [f"s{i}" for i in range(12)]
        prevalence = {sid: i / 100.0 for i, sid in enumerate(ids)}
        plan = split_subjects(ids, seed=2, prevalence=prevalence)
        train_prev = [prevalence[s] for s in plan.train]
        # the top-prevalence subject is dealt to train (largest quota), and
        # train spans both halves of the ranking
        assert max(prevalence.values()) in train_prev
        assert min(train_prev) < 0.06

    def test_leave_one_out(self):
        plans = leave_one_out_plans(["a", "b", "c"])
        assert len(plans) == 3
        assert {tuple(p.test)[0] for p in plans} == {"a", "b", "c"}
        for p in plans:
            assert p.fallback_mode == "leave_one_subject_out"


class TestBatches:
    def make_window(self, chans, subject="s"):
        return Window(subject, 0, chans, 120.0, Label.NORMAL)

    def test_gsr_only_shape(self):
        w = self.make_window({WindowChannel.GSR: np.arange(12.0)})
        batch = assemble_batch([w] * 5, Modality.GSR_ONLY)
        assert batch.data.shape == (5, 1, 12)

    def test_fused_shape_and_order(self):
        w = self.make_window(
            {WindowChannel.GSR: np.arange(12.0), WindowChannel.HR: np.arange(12.0) + 100}
        )
        batch = assemble_batch([w] * 5, Modality.FUSED_EARLY)
        assert batch.data.shape == (5, 2, 12)
        assert batch.data[0, 0, 0] == 0.0 and batch.data[0, 1, 0] == 100.0

    def test_missing_channel(self):
        w = self.make_window({WindowChannel.GSR: np.arange(12.0)})
        with pytest.raises(MissingChannelError):
            assemble_batch([w], Modality.HR_ONLY)

    def test_row_order_preserved(self):
        ws = [
            Window("s", i, {WindowChannel.GSR: np.full(12, float(i))}, 120.0, Label.NORMAL)
            for i in range(4)
        ]
        batch = assemble_batch(ws, Modality.GSR_ONLY)
        assert [batch.data[i, 0, 0] for i in range(4)] == [0.0, 1.0, 2.0, 3.0]


def test_window_prevalence():
    chans, cgm = grids(12)
    assert window_prevalence(make_windows(chans, cgm)) == 0.0
    assert window_prevalence([]) == 0.0
