"""Windowing, labeling, subject-level splitting, batch assembly.

A window is twelve consecutive 5-minute bins per channel, labeled by the
CGM value at its final bin (optionally shifted forward by ``horizon_bins``).
Windows with any missing bin in a required channel, or a missing label bin,
are dropped rather than imputed.  Splits are by whole subject so no
individual contributes to both training and evaluation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import ChannelKind, GridSeries, HypowearError, Label
from .rng import Stream, derive_seed

WINDOW_LEN = 12
HYPO_THRESHOLD_MG_DL = 70.0


class InvalidGlucoseError(HypowearError):
    pass


class TooFewSubjectsError(HypowearError):
    pass


class MissingChannelError(HypowearError):
    pass


class WindowChannel(Enum):
    GSR = "gsr"
    HR = "hr"
    TONIC = "tonic"
    PHASIC = "phasic"


class Modality(Enum):
    GSR_ONLY = "gsr_only"
    HR_ONLY = "hr_only"
    FUSED_EARLY = "fused_early"

    @property
    def channels(self) -> tuple[WindowChannel, ...]:
        if self is Modality.GSR_ONLY:
            return (WindowChannel.GSR,)
        if self is Modality.HR_ONLY:
            return (WindowChannel.HR,)
        return (WindowChannel.GSR, WindowChannel.HR)


def label_glucose(g: float) -> Label:
    """Hypo iff glucose < 70 mg/dL, strictly (70.0 itself is Normal)."""
    if not math.isfinite(g) or g <= 0:
        raise InvalidGlucoseError(f"glucose {g!r} is not a positive finite value")
    return Label.HYPO if g < HYPO_THRESHOLD_MG_DL else Label.NORMAL


@dataclass(frozen=True)
class Window:
    subject_id: str
    start_bin: int
    channels: dict
    glucose_last: float
    label: Label
    length: int = WINDOW_LEN

    def vector(self, ch: WindowChannel) -> np.ndarray:
        return self.channels[ch]


def make_windows(
    channels: dict[WindowChannel, GridSeries],
    cgm: GridSeries,
    length: int = WINDOW_LEN,
    stride: int = 1,
    horizon_bins: int = 0,
) -> list[Window]:
    """Emit one window per stride step where every required bin is observed.

    The label bin is ``start + length - 1 + horizon_bins`` on the CGM grid;
    channel data never extends past ``start + length - 1``.
    """
    if not channels:
        raise ValueError("at least one channel required")
    if stride < 1 or length < 1 or horizon_bins < 0:
        raise ValueError("length and stride must be >= 1, horizon_bins >= 0")
    n = cgm.n_bins
    for g in channels.values():
        if g.n_bins != n or g.start != cgm.start:
            raise ValueError("all channels must share the CGM grid start and length")
    mats = {ch: g.values for ch, g in channels.items()}
    observed = np.ones(n, dtype=bool)
    for g in channels.values():
        observed &= ~g.missing
    windows: list[Window] = []
    for start in range(0, n - length + 1, stride):
        label_bin = start + length - 1 + horizon_bins
        if label_bin >= n or cgm.missing[label_bin]:
            continue
        if not observed[start : start + length].all():
            continue
        glucose = float(cgm.values[label_bin])
        windows.append(
            Window(
                subject_id=cgm.subject_id,
                start_bin=start,
                channels={ch: mats[ch][start : start + length].copy() for ch in channels},
                glucose_last=glucose,
                label=label_glucose(glucose),
                length=length,
            )
        )
    return windows


@dataclass(frozen=True)
class SplitPlan:
    train: frozenset
    val: frozenset
    test: frozenset
    seed: int
    fractions: tuple = (0.8, 0.1, 0.1)
    fallback_mode: str | None = None

    def partition_of(self, subject_id: str) -> str | None:
        if subject_id in self.train:
            return "train"
        if subject_id in self.val:
            return "val"
        if subject_id in self.test:
            return "test"
        return None


def _partition_sizes(n: int, fractions: tuple) -> tuple[int, int, int]:
    # round-half-up on the val/test fractions, remainder to train,
    # at least one subject per partition
    n_val = max(1, int(math.floor(fractions[1] * n + 0.5)))
    n_test = max(1, int(math.floor(fractions[2] * n + 0.5)))
    n_train = n - n_val - n_test
    return n_train, n_val, n_test


def split_subjects(
    ids: list[str],
    fractions: tuple = (0.8, 0.1, 0.1),
    seed: int = 0,
    prevalence: dict[str, float] | None = None,
) -> SplitPlan:
    """Deterministic subject-level split.

    Subjects are shuffled by a seeded stream; when per-subject hypo
    prevalence is supplied they are ranked by it and dealt to the partition
    with the largest remaining quota deficit, so every partition spans the
    prevalence strata.  Fewer than 3 subjects cannot fill three partitions;
    callers may fall back to leave-one-subject-out.
    """
    ids = list(ids)
    n = len(ids)
    if n < 3:
        raise TooFewSubjectsError(f"{n} subjects; need >= 3 (or leave-one-subject-out)")
    if len(set(ids)) != n:
        raise ValueError("duplicate subject ids")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    order = Stream(derive_seed(seed, "split")).permutation(n)
    shuffled = [ids[i] for i in order]
    n_train, n_val, n_test = _partition_sizes(n, fractions)
    if n_train < 1:
        raise TooFewSubjectsError("fractions leave no training subjects")

    if prevalence is None:
        train = shuffled[:n_train]
        val = shuffled[n_train : n_train + n_val]
        test = shuffled[n_train + n_val :]
    else:
        ranked = sorted(shuffled, key=lambda s: -prevalence.get(s, 0.0))
        quota = {"train": n_train, "val": n_val, "test": n_test}
        target = {k: v / n for k, v in quota.items()}
        counts = {"train": 0, "val": 0, "test": 0}
        buckets = {"train": [], "val": [], "test": []}
        for i, sid in enumerate(ranked):
            open_parts = [p for p in ("train", "val", "test") if counts[p] < quota[p]]
            part = max(open_parts, key=lambda p: target[p] * (i + 1) - counts[p])
            buckets[part].append(sid)
            counts[part] += 1
        train, val, test = buckets["train"], buckets["val"], buckets["test"]

    return SplitPlan(
        train=frozenset(train),
        val=frozenset(val),
        test=frozenset(test),
        seed=seed,
        fractions=tuple(fractions),
    )


def leave_one_out_plans(ids: list[str]) -> list[SplitPlan]:
    """Fallback for tiny cohorts: each subject is the test set once and the
    next subject (cyclically) is validation."""
    ids = sorted(ids)
    if len(ids) < 2:
        raise TooFewSubjectsError("leave-one-subject-out needs >= 2 subjects")
    plans = []
    for i, test_id in enumerate(ids):
        val_id = ids[(i + 1) % len(ids)]
        train = [s for s in ids if s not in (test_id, val_id)]
        plans.append(
            SplitPlan(
                train=frozenset(train),
                val=frozenset([val_id]),
                test=frozenset([test_id]),
                seed=0,
                fractions=(0.0, 0.0, 0.0),
                fallback_mode="leave_one_subject_out",
            )
        )
    return plans


@dataclass(frozen=True)
class SequenceBatch:
    data: np.ndarray  # n x channels x window_len
    labels: np.ndarray  # n, in {0, 1}
    modality: Modality
    subject_ids: tuple = field(default=(), compare=False)


def assemble_batch(windows: list[Window], modality: Modality) -> SequenceBatch:
    """Stack windows into an n x C x L array; fused order is (GSR, HR)."""
    if not windows:
        raise ValueError("no windows to assemble")
    wanted = modality.channels
    for w in windows:
        for ch in wanted:
            if ch not in w.channels:
                raise MissingChannelError(f"window lacks channel {ch.value}")
    data = np.stack([np.stack([w.channels[ch] for ch in wanted]) for w in windows])
    labels = np.array([1 if w.label is Label.HYPO else 0 for w in windows], dtype=np.int64)
    return SequenceBatch(data, labels, modality, tuple(w.subject_id for w in windows))


def window_prevalence(windows: list[Window]) -> float:
    if not windows:
        return 0.0
    return sum(1 for w in windows if w.label is Label.HYPO) / len(windows)


def windows_to_csv(windows: list[Window], path, config_hash: str | None = None) -> None:
    """One row per window: subject, start_bin, label, glucose, then one
    column per (channel, step) in channel-major order."""
    if not windows:
        raise ValueError("no windows to write")
    chans = sorted(windows[0].channels, key=lambda c: c.value)
    header = ["subject_id", "start_bin", "label", "glucose_last"]
    for ch in chans:
        header += [f"{ch.value}_{i}" for i in range(windows[0].length)]
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for w in windows:
            row = [w.subject_id, w.start_bin, w.label.value, repr(w.glucose_last)]
            for ch in chans:
                row += [repr(float(v)) for v in w.channels[ch]]
            writer.writerow(row)
