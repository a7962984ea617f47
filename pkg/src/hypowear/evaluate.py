"""Confusion metrics, rank-based AUC, stratified bootstrap CIs, and the
report tables.

Conventions: a probability >= threshold predicts the positive (hypo)
class; precision is 0 when nothing is predicted positive; F1 is 0 when
precision + recall is 0.  AUC uses the Mann-Whitney rank formulation with
average ranks for ties.  Bootstrap intervals are percentile intervals over
stratified resamples (positives and negatives resampled separately,
preserving counts).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import HypowearError
from .rng import Stream, derive_seed


class LengthMismatchError(HypowearError):
    pass


class OneClassOnlyError(HypowearError):
    pass


@dataclass(frozen=True)
class BootstrapCfg:
    iterations: int = 1000
    level: float = 0.95
    stratified: bool = True
    seed: int = 0
    variant: str = "percentile"

    def __post_init__(self):
        if self.iterations < 100:
            raise ValueError("iterations must be >= 100")


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision_hypo: float
    recall_hypo: float
    f1_hypo: float
    auc: float | None
    n_pos: int
    n_neg: int
    threshold: float
    ci95: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision_hypo": self.precision_hypo,
            "recall_hypo": self.recall_hypo,
            "f1_hypo": self.f1_hypo,
            "auc": self.auc,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "threshold": self.threshold,
            "ci95": {k: list(v) for k, v in sorted(self.ci95.items())},
        }


def _check_lengths(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape or probs.ndim != 1:
        raise LengthMismatchError(f"probs {probs.shape} vs labels {labels.shape}")
    return probs, labels


def confusion(probs, labels, threshold: float = 0.5):
    """(TP, FP, FN, TN); prediction is positive iff prob >= threshold."""
    probs, labels = _check_lengths(probs, labels)
    pred = probs >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return tp, fp, fn, tn


def metrics(conf) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1) with the zero conventions above."""
    tp, fp, fn, tn = conf
    total = tp + fp + fn + tn
    if total == 0:
        raise ValueError("empty confusion matrix")
    accuracy = (tp + tn) / total
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return accuracy, precision, recall, f1


def auc(probs, labels) -> float:
    """Mann-Whitney AUC via average ranks, O(n log n); ties count half."""
    probs, labels = _check_lengths(probs, labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = probs.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnlyError("AUC needs at least one positive and one negative")
    order = np.argsort(probs, kind="stable")
    sorted_probs = probs[order]
    ranks = np.empty(probs.size)
    i = 0
    while i < probs.size:
        j = i
        while j + 1 < probs.size and sorted_probs[j + 1] == sorted_probs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = float(ranks[pos].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _metric_values(probs, labels, threshold):
    acc, prec, rec, f1 = metrics(confusion(probs, labels, threshold))
    out = {"accuracy": acc, "precision_hypo": prec, "recall_hypo": rec, "f1_hypo": f1}
    try:
        out["auc"] = auc(probs, labels)
    except OneClassOnlyError:
        pass
    return out


def bootstrap_ci(
    probs, labels, cfg: BootstrapCfg, threshold: float = 0.5
) -> tuple[dict, int]:
    """Percentile CIs per metric over seeded stratified resamples.

    Returns (ci_map, n_degenerate) where degenerate resamples (a metric
    undefined, e.g. single-class AUC) are skipped for that metric and
    counted.
    """
    probs, labels = _check_lengths(probs, labels)
    if probs.size < 10:
        raise ValueError("bootstrap needs n >= 10")
    stream = Stream(derive_seed(cfg.seed, "bootstrap"))
    pos_idx = np.nonzero(labels == 1)[0]
    neg_idx = np.nonzero(labels != 1)[0]
    samples: dict[str, list] = {
        "accuracy": [],
        "precision_hypo": [],
        "recall_hypo": [],
        "f1_hypo": [],
        "auc": [],
    }
    n_degenerate = 0
    for _ in range(cfg.iterations):
        if cfg.stratified and pos_idx.size and neg_idx.size:
            take = np.concatenate(
                [
                    pos_idx[stream.integers(pos_idx.size, pos_idx.size)],
                    neg_idx[stream.integers(neg_idx.size, neg_idx.size)],
                ]
            )
        else:
            take = stream.integers(probs.size, probs.size)
        vals = _metric_values(probs[take], labels[take], threshold)
        if "auc" not in vals:
            n_degenerate += 1
        for key, v in vals.items():
            samples[key].append(v)
    lo_q = 100.0 * (1.0 - cfg.level) / 2.0
    hi_q = 100.0 - lo_q
    ci = {}
    for key, vals in samples.items():
        if vals:
            lo, hi = np.percentile(vals, [lo_q, hi_q], method="linear")
            ci[key] = (float(lo), float(hi))
    return ci, n_degenerate


def evaluate_predictions(
    probs, labels, cfg: BootstrapCfg | None = None, threshold: float = 0.5
) -> MetricsReport:
    probs, labels = _check_lengths(probs, labels)
    acc, prec, rec, f1 = metrics(confusion(probs, labels, threshold))
    try:
        auc_value = auc(probs, labels)
    except OneClassOnlyError:
        auc_value = None
    ci = {}
    if cfg is not None:
        ci, _ = bootstrap_ci(probs, labels, cfg, threshold)
    return MetricsReport(
        accuracy=acc,
        precision_hypo=prec,
        recall_hypo=rec,
        f1_hypo=f1,
        auc=auc_value,
        n_pos=int(np.sum(labels == 1)),
        n_neg=int(np.sum(labels != 1)),
        threshold=threshold,
        ci95=ci,
    )


def tune_threshold(probs, labels, grid=None) -> float:
    """Threshold maximizing F1 on (validation) predictions; ties -> smaller."""
    probs, labels = _check_lengths(probs, labels)
    if grid is None:
        grid = np.round(np.arange(0.05, 1.0, 0.05), 2)
    best_t, best_f1 = 0.5, -1.0
    for t in grid:
        _, _, _, f1 = metrics(confusion(probs, labels, float(t)))
        if f1 > best_f1:
            best_t, best_f1 = float(t), f1
    return best_t


# Published reference values for the fused-LSTM row (restricted clinical
# dataset); printed as an annotation in reports, never asserted.
REFERENCE_FUSED_LSTM = {"recall": 0.44, "f1": 0.16, "auc": 0.78}
REFERENCE_FUSION_GAIN_NOTE = (
    "published reference reports fusion raising F1 by ~45-70% over the best "
    "single modality; annotation only"
)


TABLE_HEADER = "Model,Recall,F1-score,AUC,95% CI (F1) lo,95% CI (F1) hi"


def format_table(modality: str, rows: dict, config_hash: str | None = None) -> str:
    """One CSV table per modality: Model, Recall, F1-score, AUC, 95% CI(F1).

    Values are written at full precision so the CSV round-trips losslessly.
    """
    lines = []
    if config_hash:
        lines.append(f"# config_hash={config_hash}")
    lines.append(TABLE_HEADER)
    for model_name in sorted(rows):
        r = rows[model_name]
        ci = r.ci95.get("f1_hypo")
        lo = repr(float(ci[0])) if ci else ""
        hi = repr(float(ci[1])) if ci else ""
        auc_text = repr(float(r.auc)) if r.auc is not None else ""
        lines.append(
            f"{model_name},{float(r.recall_hypo)!r},{float(r.f1_hypo)!r},{auc_text},{lo},{hi}"
        )
    if modality == "fused_early":
        ref = REFERENCE_FUSED_LSTM
        lines.append(
            f"# reference (not asserted): fused LSTM recall {ref['recall']}, "
            f"f1 {ref['f1']}, auc {ref['auc']}"
        )
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> dict:
    """Inverse of ``format_table`` for the numeric columns."""
    rows = {}
    for line in text.splitlines():
        if not line or line.startswith("#") or line.startswith("Model,"):
            continue
        name, recall, f1, auc_text, lo, hi = line.split(",")
        rows[name] = {
            "recall": float(recall),
            "f1": float(f1),
            "auc": float(auc_text) if auc_text else None,
            "ci95_f1": (float(lo), float(hi)) if lo else None,
        }
    return rows


def best_per_modality(results: dict) -> dict:
    """Best model per modality by F1 (ties by name for determinism)."""
    summary = {}
    for modality, rows in results.items():
        if not rows:
            continue
        best_name = min(rows, key=lambda name: (-rows[name].f1_hypo, name))
        summary[modality] = {
            "model": best_name,
            "recall": rows[best_name].recall_hypo,
            "f1": rows[best_name].f1_hypo,
        }
    return summary
