"""SGD-with-momentum training loop with class-weighted BCE and early
stopping on validation F1.

The seed fully determines initialization (via ``build``), per-epoch
shuffling, and batching, so a fixed seed reproduces bit-identical models
in 64-bit mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import HypowearError
from ..rng import Stream, derive_seed
from . import autodiff as ad
from .architectures import Net, predict_proba


class DivergedError(HypowearError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainOpts:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    pos_weight: float = 1.0
    neg_weight: float = 1.0
    seed: int = 0


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_f1: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _f1_at_half(probs: np.ndarray, labels: np.ndarray) -> float:
    pred = probs >= 0.5
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def train_net(
    net: Net,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    opts: TrainOpts,
) -> TrainHistory:
    """Train in place; restores the best-validation-F1 parameters at exit."""
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64).reshape(-1)
    weights = np.where(y_train == 1, opts.pos_weight, opts.neg_weight)
    params = net.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    history = TrainHistory()
    best_state = net.get_state()
    best_f1 = -1.0
    epochs_since_best = 0
    n = x_train.shape[0]

    for epoch in range(1, opts.max_epochs + 1):
        order = Stream(derive_seed(opts.seed, "shuffle", epoch)).permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, opts.batch_size):
            idx = order[lo : lo + opts.batch_size]
            logits = net.forward(x_train[idx])
            loss = ad.bce_with_logits(logits, y_train[idx], weights[idx])
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise DivergedError(epoch)
            net.zero_grad()
            loss.backward()
            for p, v in zip(params, velocity):
                if p.grad is not None:
                    v *= opts.momentum
                    v -= opts.lr * p.grad
                    p.data = p.data + v
            epoch_loss += loss_value
            n_batches += 1
        history.train_loss.append(epoch_loss / max(n_batches, 1))

        val_probs = predict_proba(net, x_val)
        f1 = _f1_at_half(val_probs, np.asarray(y_val).reshape(-1))
        history.val_f1.append(f1)
        if f1 > best_f1:
            best_f1 = f1
            best_state = net.get_state()
            history.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= opts.patience:
                history.stopped_early = True
                break

    net.set_state(best_state)
    return history
