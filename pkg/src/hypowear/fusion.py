"""Decision-level fusion of per-modality probability streams.

Late fusion consumes probability vectors only, never raw signals.  Fusion
parameters are fit on validation predictions (from models never trained on
validation labels) and applied once to test, preserving the subject-level
leakage guarantees.  Early fusion lives in the dataset layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classical import ClassWeights, LogisticModel, train_logistic
from .evaluate import LengthMismatchError, confusion, metrics


@dataclass(frozen=True)
class WeightedAverageFusion:
    w: float  # weight on the GSR stream
    fit_partition: str = "val"

    def apply(self, p_gsr, p_hr) -> np.ndarray:
        return fuse_weighted(p_gsr, p_hr, self.w)


@dataclass(frozen=True)
class LogisticStackFusion:
    intercept: float
    coef_gsr: float
    coef_hr: float
    fit_partition: str = "val"

    def apply(self, p_gsr, p_hr) -> np.ndarray:
        p_gsr, p_hr = _check_pair(p_gsr, p_hr)
        z = self.intercept + self.coef_gsr * p_gsr + self.coef_hr * p_hr
        return 1.0 / (1.0 + np.exp(-z))


def _check_pair(p_gsr, p_hr):
    p_gsr = np.asarray(p_gsr, dtype=np.float64)
    p_hr = np.asarray(p_hr, dtype=np.float64)
    if p_gsr.shape != p_hr.shape or p_gsr.ndim != 1:
        raise LengthMismatchError(f"{p_gsr.shape} vs {p_hr.shape}")
    return p_gsr, p_hr


def fuse_weighted(p_gsr, p_hr, w: float) -> np.ndarray:
    """Elementwise convex combination w*p_gsr + (1-w)*p_hr."""
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must be in [0, 1]")
    p_gsr, p_hr = _check_pair(p_gsr, p_hr)
    return w * p_gsr + (1.0 - w) * p_hr


def fit_weight(val_p_gsr, val_p_hr, val_labels) -> WeightedAverageFusion:
    """Grid search w in {0, 0.05, ..., 1} maximizing F1 at threshold 0.5;
    ties take the smaller w."""
    val_p_gsr, val_p_hr = _check_pair(val_p_gsr, val_p_hr)
    labels = np.asarray(val_labels)
    best_w, best_f1 = 0.0, -1.0
    for step in range(21):
        w = step / 20.0
        fused = fuse_weighted(val_p_gsr, val_p_hr, w)
        _, _, _, f1 = metrics(confusion(fused, labels))
        if f1 > best_f1:
            best_w, best_f1 = w, f1
    return WeightedAverageFusion(w=best_w)


def fit_stack(
    val_p_gsr, val_p_hr, val_labels, l2: float = 1e-3, epochs: int = 500, lr: float = 0.1, tol: float = 1e-6
) -> LogisticStackFusion:
    """Two-feature weighted logistic regression on validation predictions."""
    val_p_gsr, val_p_hr = _check_pair(val_p_gsr, val_p_hr)
    labels = np.asarray(val_labels, dtype=np.float64)
    X = np.column_stack([val_p_gsr, val_p_hr])
    model: LogisticModel = train_logistic(
        X, labels, ClassWeights.from_labels(labels), l2=l2, epochs=epochs, lr=lr, tol=tol
    )
    return LogisticStackFusion(
        intercept=float(model.intercept),
        coef_gsr=float(model.weights[0]),
        coef_hr=float(model.weights[1]),
    )
