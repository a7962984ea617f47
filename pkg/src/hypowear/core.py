"""Shared domain types: channels, sample series, the 5-minute grid, labels.

All types are immutable after construction and safe to share across
workers.  Timestamps are integer seconds since the Unix epoch (UTC); the
grid step is hard-fixed at 300 s to match the CGM cadence, so window
length (12) and stride (1) are always expressed in the same unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

import numpy as np

GRID_STEP_S = 300

TimeInstant = int  # seconds since epoch, UTC


class HypowearError(Exception):
    """Base class for all package errors."""


class OutOfRangeError(HypowearError):
    """Timestamp falls outside a grid's span."""


class ChannelKind(Enum):
    GSR = "gsr"
    HR = "hr"
    CGM = "cgm"

    @property
    def units(self) -> str:
        return _UNITS[self]


_UNITS = {
    ChannelKind.GSR: "microsiemens",
    ChannelKind.HR: "bpm",
    ChannelKind.CGM: "mg_per_dL",
}

# Physiological plausibility bands (warn, never reject: free-living wearables
# produce transient out-of-band values that downstream filters remove).
PLAUSIBILITY_BANDS = {
    ChannelKind.GSR: (0.0, 100.0),
    ChannelKind.HR: (25.0, 250.0),
    ChannelKind.CGM: (10.0, 600.0),
}


class Label(Enum):
    HYPO = "hypo"
    NORMAL = "normal"


def parse_timestamp(text: str) -> TimeInstant:
    """ISO-8601 UTC string to epoch seconds. Raises ValueError if malformed."""
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(t: TimeInstant) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class SampleSeries:
    """Raw irregular samples for one channel of one subject.

    Timestamps are expected to be strictly increasing and values finite;
    neither is enforced at construction so that ``validate_series`` can
    report violations on real-world input.
    """

    subject_id: str
    channel: ChannelKind
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class GridSeries:
    """Channel values aligned to the 5-minute grid, with a missingness mask.

    ``values[i]`` covers ``[start + 300*i, start + 300*(i+1))``.  Where
    ``missing[i]`` is true the stored value is NaN and must never be read.
    """

    subject_id: str
    channel: ChannelKind
    start: TimeInstant
    values: np.ndarray
    missing: np.ndarray
    step_s: int = GRID_STEP_S

    def __post_init__(self):
        if self.step_s != GRID_STEP_S:
            raise ValueError(f"grid step is fixed at {GRID_STEP_S} s")
        values = np.asarray(self.values, dtype=np.float64).copy()
        missing = np.asarray(self.missing, dtype=bool).copy()
        if values.shape != missing.shape or values.ndim != 1 or values.size < 1:
            raise ValueError("values and missing must be equal-length 1-D, length >= 1")
        values[missing] = np.nan
        values.setflags(write=False)
        missing.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    @property
    def n_bins(self) -> int:
        return int(self.values.size)

    def bin_time(self, i: int) -> TimeInstant:
        return self.start + self.step_s * i

    def observed(self) -> np.ndarray:
        """Values at non-missing bins, in order."""
        return self.values[~self.missing]

    def replace(self, values: np.ndarray, missing: np.ndarray) -> "GridSeries":
        return GridSeries(self.subject_id, self.channel, self.start, values, missing)


def bin_index(t: TimeInstant, grid: GridSeries) -> int:
    """Grid bin containing ``t``; floor semantics, bucket edge belongs to the next bin."""
    offset = t - grid.start
    if offset < 0 or offset >= grid.step_s * grid.n_bins:
        raise OutOfRangeError(
            f"t={t} outside grid [{grid.start}, {grid.start + grid.step_s * grid.n_bins})"
        )
    return offset // grid.step_s


class ViolationKind(Enum):
    NON_MONOTONIC_TIMESTAMP = "non_monotonic_timestamp"
    NON_FINITE_VALUE = "non_finite_value"
    OUT_OF_BAND = "out_of_band"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    index: int
    message: str = field(default="", compare=False)


def validate_series(s: SampleSeries) -> list[Violation]:
    """Report-only validation: monotonicity, finiteness, plausibility band."""
    out: list[Violation] = []
    if len(s) > 1:
        bad = np.nonzero(np.diff(s.times) <= 0)[0]
        for i in bad:
            out.append(
                Violation(
                    ViolationKind.NON_MONOTONIC_TIMESTAMP,
                    int(i + 1),
                    f"timestamp {s.times[i + 1]} not after {s.times[i]}",
                )
            )
    finite = np.isfinite(s.values)
    for i in np.nonzero(~finite)[0]:
        out.append(Violation(ViolationKind.NON_FINITE_VALUE, int(i), f"value {s.values[i]!r}"))
    lo, hi = PLAUSIBILITY_BANDS[s.channel]
    in_band = (s.values >= lo) & (s.values <= hi)
    for i in np.nonzero(finite & ~in_band)[0]:
        out.append(
            Violation(
                ViolationKind.OUT_OF_BAND,
                int(i),
                f"{s.channel.value} value {s.values[i]} outside [{lo}, {hi}]",
            )
        )
    return out
