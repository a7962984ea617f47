"""Fixed-order handcrafted features per window for the classical models.

Registry (order is the contract; names are the CSV header):

* GSR block (12): mean, sd, min, max, range, least-squares slope,
  first-difference mean/sd, tonic mean, phasic mean, phasic max, SCR count.
* HR block (9): mean, sd, min, max, range, slope, first-difference mean/sd,
  fraction of bins above the window mean.
* Frequency block per channel (2): low-band energy (DFT bins 1-2) and
  high-band energy (bins 3-6), squared magnitudes, DC excluded.  The DFT is
  direct summation on the 12 points, no taper: bit-stable and the sequence
  is too short for windowing to matter.
* Fused adds the zero-lag Pearson correlation of the GSR and HR vectors (1).

GsrOnly selects 14 features, HrOnly 11, FusedEarly 26.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Modality, MissingChannelError, Window, WindowChannel
from .eda import EdaParams, count_scrs

_T = np.arange(12, dtype=np.float64)
_T_CENTERED = _T - _T.mean()
_SLOPE_DENOM = float(_T_CENTERED @ _T_CENTERED)

GSR_NAMES = (
    "gsr_mean",
    "gsr_sd",
    "gsr_min",
    "gsr_max",
    "gsr_range",
    "gsr_slope",
    "gsr_diff_mean",
    "gsr_diff_sd",
    "tonic_mean",
    "phasic_mean",
    "phasic_max",
    "scr_count",
)
HR_NAMES = (
    "hr_mean",
    "hr_sd",
    "hr_min",
    "hr_max",
    "hr_range",
    "hr_slope",
    "hr_diff_mean",
    "hr_diff_sd",
    "hr_frac_above_mean",
)
FREQ_NAMES = ("low_energy", "high_energy")
CROSS_NAMES = ("gsr_hr_corr",)


def registry(modality: Modality) -> tuple[str, ...]:
    if modality is Modality.GSR_ONLY:
        return GSR_NAMES + tuple(f"gsr_{n}" for n in FREQ_NAMES)
    if modality is Modality.HR_ONLY:
        return HR_NAMES + tuple(f"hr_{n}" for n in FREQ_NAMES)
    return (
        GSR_NAMES
        + HR_NAMES
        + tuple(f"gsr_{n}" for n in FREQ_NAMES)
        + tuple(f"hr_{n}" for n in FREQ_NAMES)
        + CROSS_NAMES
    )


@dataclass(frozen=True)
class FeatureVector:
    names: tuple
    values: np.ndarray
    flags: tuple = ()


def band_energies(x: np.ndarray) -> tuple[float, float]:
    """Direct-summation 12-point DFT band energies (bins 1-2 and 3-6)."""
    low = 0.0
    high = 0.0
    for k in range(1, 7):
        angle = -2.0 * np.pi * k * _T / 12.0
        re = float(x @ np.cos(angle))
        im = float(x @ np.sin(angle))
        energy = re * re + im * im
        if k <= 2:
            low += energy
        else:
            high += energy
    return low, high


def _stats_block(x: np.ndarray) -> list[float]:
    mean = float(x.mean())
    sd = float(x.std())
    slope = float(_T_CENTERED @ (x - mean)) / _SLOPE_DENOM
    d = np.diff(x)
    return [
        mean,
        sd,
        float(x.min()),
        float(x.max()),
        float(x.max() - x.min()),
        slope,
        float(d.mean()),
        float(d.std()),
    ]


def extract(w: Window, modality: Modality, eda_params: EdaParams = EdaParams()) -> FeatureVector:
    """Handcrafted descriptors of one complete window."""
    flags: list[str] = []
    values: list[float] = []

    def need(ch: WindowChannel) -> np.ndarray:
        if ch not in w.channels:
            raise MissingChannelError(f"window lacks channel {ch.value}")
        return w.channels[ch]

    use_gsr = modality in (Modality.GSR_ONLY, Modality.FUSED_EARLY)
    use_hr = modality in (Modality.HR_ONLY, Modality.FUSED_EARLY)

    if use_gsr:
        gsr = need(WindowChannel.GSR)
        tonic = need(WindowChannel.TONIC)
        phasic = need(WindowChannel.PHASIC)
        values += _stats_block(gsr)
        values += [
            float(tonic.mean()),
            float(phasic.mean()),
            float(phasic.max()),
            float(count_scrs(phasic, eda_params)),
        ]
    if use_hr:
        hr = need(WindowChannel.HR)
        values += _stats_block(hr)
        values.append(float(np.mean(hr > hr.mean())))
    if use_gsr:
        values += band_energies(need(WindowChannel.GSR))
    if use_hr:
        values += band_energies(need(WindowChannel.HR))
    if modality is Modality.FUSED_EARLY:
        gsr = need(WindowChannel.GSR)
        hr = need(WindowChannel.HR)
        sg, sh = gsr.std(), hr.std()
        if sg == 0.0 or sh == 0.0:
            flags.append("degenerate_correlation")
            corr = 0.0
        else:
            corr = float(np.mean((gsr - gsr.mean()) * (hr - hr.mean())) / (sg * sh))
        values.append(corr)

    names = registry(modality)
    vec = np.asarray(values, dtype=np.float64)
    assert vec.size == len(names)
    return FeatureVector(names, vec, tuple(flags))


def feature_matrix(
    windows: list[Window], modality: Modality, eda_params: EdaParams = EdaParams()
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Row i = extract(windows[i]); column order is the registry."""
    if not windows:
        raise ValueError("no windows")
    names = registry(modality)
    X = np.empty((len(windows), len(names)))
    for i, w in enumerate(windows):
        X[i] = extract(w, modality, eda_params).values
    return X, names


def write_feature_csv(X: np.ndarray, names: tuple, path, config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write(",".join(names) + "\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
