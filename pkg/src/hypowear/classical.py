"""From-scratch classical learners: logistic regression, KNN, random
forest, and second-order gradient-boosted trees, all imbalance-aware.

Every model emits probabilities in [0, 1].  Decision thresholds are owned
by the evaluation layer, not the learners, so model outputs stay
comparable.  Tree learners use exact greedy splits over sorted feature
values: desk-scale data makes that tractable and bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import HypowearError
from .rng import Stream, derive_seed


class EmptyTrainingError(HypowearError):
    pass


@dataclass(frozen=True)
class ClassWeights:
    w_pos: float
    w_neg: float = 1.0

    @staticmethod
    def from_labels(y: np.ndarray) -> "ClassWeights":
        """w_pos = n_neg / n_pos, computed on training labels only."""
        y = np.asarray(y)
        n_pos = int((y == 1).sum())
        n_neg = int((y == 0).sum())
        if n_pos == 0:
            return ClassWeights(w_pos=1.0)
        return ClassWeights(w_pos=n_neg / n_pos)

    def per_sample(self, y: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(y) == 1, self.w_pos, self.w_neg)

    @staticmethod
    def unweighted() -> "ClassWeights":
        return ClassWeights(w_pos=1.0, w_neg=1.0)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


@dataclass
class LogisticModel:
    weights: np.ndarray
    intercept: float
    converged: bool = False
    n_epochs: int = 0

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(np.asarray(X) @ self.weights + self.intercept)

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "family": "logistic",
            "weights": [float(v) for v in self.weights],
            "intercept": float(self.intercept),
        }

    @staticmethod
    def from_doc(doc: dict) -> "LogisticModel":
        return LogisticModel(np.asarray(doc["weights"], dtype=np.float64), float(doc["intercept"]))


def logistic_loss_grad(X, y, w, b, sample_weights, l2):
    """Mean weighted logistic loss with L2 on the weights (not the
    intercept), and its gradient.  Mean normalization makes the optimum
    invariant to duplicating every sample."""
    n = X.shape[0]
    z = X @ w + b
    p = _sigmoid(z)
    # log-loss via log1p(exp(-|z|)) for stability
    ll = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0.0) - y * z
    loss = float(np.sum(sample_weights * ll) / n + 0.5 * l2 * (w @ w))
    resid = sample_weights * (p - y)
    grad_w = X.T @ resid / n + l2 * w
    grad_b = float(resid.sum() / n)
    return loss, grad_w, grad_b, p


def train_logistic(
    X: np.ndarray,
    y: np.ndarray,
    class_weights: ClassWeights,
    l2: float = 1e-3,
    epochs: int = 500,
    lr: float = 0.1,
    tol: float = 1e-6,
) -> LogisticModel:
    """Full-batch gradient descent on the weighted, L2-regularized loss."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sw = class_weights.per_sample(y)
    w = np.zeros(X.shape[1])
    b = 0.0
    converged = False
    epoch = 0
    for epoch in range(1, epochs + 1):
        _, grad_w, grad_b, _ = logistic_loss_grad(X, y, w, b, sw, l2)
        if max(np.abs(grad_w).max() if grad_w.size else 0.0, abs(grad_b)) < tol:
            converged = True
            break
        w -= lr * grad_w
        b -= lr * grad_b
    return LogisticModel(w, b, converged, epoch)


# ---------------------------------------------------------------------------
# K-nearest neighbors
# ---------------------------------------------------------------------------


def knn_predict(
    X_train: np.ndarray, y_train: np.ndarray, X_query: np.ndarray, k: int = 5
) -> np.ndarray:
    """Euclidean vote: fraction of positives among the k nearest training
    rows; distance ties broken by training-row index (stable sort)."""
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train)
    X_query = np.asarray(X_query, dtype=np.float64)
    if X_train.shape[0] == 0:
        raise EmptyTrainingError("KNN requires a nonempty training set")
    if not 1 <= k <= X_train.shape[0]:
        raise ValueError("k must be in [1, n_train]")
    train_sq = np.sum(X_train**2, axis=1)[None, :]
    probs = np.empty(X_query.shape[0])
    block = 512  # bounds the distance-matrix footprint
    for lo in range(0, X_query.shape[0], block):
        chunk = X_query[lo : lo + block]
        d2 = np.sum(chunk**2, axis=1)[:, None] - 2.0 * chunk @ X_train.T + train_sq
        for i in range(chunk.shape[0]):
            nearest = np.argsort(d2[i], kind="stable")[:k]
            probs[lo + i] = float(np.mean(y_train[nearest] == 1))
    return probs


# ---------------------------------------------------------------------------
# Decision trees (shared machinery)
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    leaf_value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def _predict_tree(nodes: list[TreeNode], X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = nodes[0]
        while not node.is_leaf:
            node = nodes[node.left] if X[i, node.feature] < node.threshold else nodes[node.right]
        out[i] = node.leaf_value
    return out


def _tree_doc(nodes: list[TreeNode]) -> list[dict]:
    return [
        {
            "feature": n.feature,
            "threshold": float(n.threshold),
            "left": n.left,
            "right": n.right,
            "leaf_value": float(n.leaf_value),
        }
        for n in nodes
    ]


def _tree_from_doc(doc: list[dict]) -> list[TreeNode]:
    return [
        TreeNode(d["feature"], d["threshold"], d["left"], d["right"], d["leaf_value"]) for d in doc
    ]


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


@dataclass
class ForestModel:
    trees: list
    feature_importances: np.ndarray
    n_features: int

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        acc = np.zeros(X.shape[0])
        for nodes in self.trees:
            acc += _predict_tree(nodes, X)
        return acc / len(self.trees)

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "family": "forest",
            "n_features": self.n_features,
            "feature_importances": [float(v) for v in self.feature_importances],
            "trees": [_tree_doc(t) for t in self.trees],
        }

    @staticmethod
    def from_doc(doc: dict) -> "ForestModel":
        return ForestModel(
            [_tree_from_doc(t) for t in doc["trees"]],
            np.asarray(doc["feature_importances"], dtype=np.float64),
            doc["n_features"],
        )


def _best_gini_split(X, w1, w0, feature_ids, min_leaf):
    """Exact greedy split by weighted Gini decrease over candidate features.

    Returns (gain, feature, threshold) with gain <= 0 meaning no usable split.
    """
    total1 = w1.sum()
    total0 = w0.sum()
    total = total1 + total0

    def gini_sum(a1, a0):
        tot = a1 + a0
        with np.errstate(invalid="ignore", divide="ignore"):
            g = tot - (a1 * a1 + a0 * a0) / tot
        return np.where(tot > 0, g, 0.0)

    parent = float(gini_sum(np.array([total1]), np.array([total0]))[0])
    best = (0.0, -1, 0.0)
    n = X.shape[0]
    for f in feature_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        c1 = np.cumsum(w1[order])[:-1]
        c0 = np.cumsum(w0[order])[:-1]
        valid = xs[1:] != xs[:-1]
        counts = np.arange(1, n)
        valid &= (counts >= min_leaf) & (n - counts >= min_leaf)
        if not valid.any():
            continue
        gains = parent - gini_sum(c1, c0) - gini_sum(total1 - c1, total0 - c0)
        gains[~valid] = -np.inf
        i = int(np.argmax(gains))
        if gains[i] > best[0]:
            best = (float(gains[i]), int(f), float(0.5 * (xs[i] + xs[i + 1])))
    return best


def _grow_gini_tree(X, y, sw, max_depth, mtry, min_leaf, stream, importances):
    nodes: list[TreeNode] = []
    d = X.shape[1]

    def leaf_value(idx):
        w = sw[idx]
        w1 = float(w[y[idx] == 1].sum())
        tot = float(w.sum())
        return w1 / tot if tot > 0 else 0.0

    def grow(idx, depth):
        node_id = len(nodes)
        nodes.append(TreeNode(leaf_value=leaf_value(idx)))
        if depth >= max_depth or idx.size < 2 * min_leaf:
            return node_id
        feats = np.sort(stream.permutation(d)[:mtry])
        w = sw[idx]
        w1 = np.where(y[idx] == 1, w, 0.0)
        w0 = np.where(y[idx] == 0, w, 0.0)
        gain, f, thr = _best_gini_split(X[idx], w1, w0, feats, min_leaf)
        if f < 0:
            return node_id
        importances[f] += gain
        mask = X[idx, f] < thr
        left_id = grow(idx[mask], depth + 1)
        right_id = grow(idx[~mask], depth + 1)
        nodes[node_id] = TreeNode(f, thr, left_id, right_id, nodes[node_id].leaf_value)
        return node_id

    grow(np.arange(X.shape[0]), 0)
    return nodes


def train_forest(
    X: np.ndarray,
    y: np.ndarray,
    class_weights: ClassWeights,
    n_trees: int = 200,
    max_depth: int = 8,
    mtry: int | None = None,
    min_leaf: int = 5,
    seed: int = 0,
) -> ForestModel:
    """Seeded bootstrap per tree, weighted-Gini exact splits, leaf = weighted
    positive fraction; also emits normalized impurity-decrease importances."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n, d = X.shape
    if mtry is None:
        mtry = int(np.ceil(np.sqrt(d)))
    mtry = min(max(1, mtry), d)
    sw = class_weights.per_sample(y)
    importances = np.zeros(d)
    trees = []
    for t in range(n_trees):
        stream = Stream(derive_seed(seed, "forest_tree", t))
        boot = stream.integers(n, n)
        trees.append(_grow_gini_tree(X[boot], y[boot], sw[boot], max_depth, mtry, min_leaf, stream, importances))
    total = importances.sum()
    if total > 0:
        importances = importances / total
    return ForestModel(trees, importances, d)


# ---------------------------------------------------------------------------
# Gradient-boosted trees (second-order, logistic loss)
# ---------------------------------------------------------------------------


@dataclass
class GbtModel:
    trees: list
    base_score: float
    learning_rate: float
    best_round: int
    train_loss_history: list = field(default_factory=list)
    val_loss_history: list = field(default_factory=list)

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        f = np.full(X.shape[0], self.base_score)
        for nodes in self.trees:
            f += self.learning_rate * _predict_tree(nodes, X)
        return f

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision_scores(X))

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "family": "gbt",
            "base_score": float(self.base_score),
            "learning_rate": float(self.learning_rate),
            "best_round": self.best_round,
            "trees": [_tree_doc(t) for t in self.trees],
        }

    @staticmethod
    def from_doc(doc: dict) -> "GbtModel":
        return GbtModel(
            [_tree_from_doc(t) for t in doc["trees"]],
            float(doc["base_score"]),
            float(doc["learning_rate"]),
            int(doc["best_round"]),
        )


def _best_newton_split(X, g, h, lam, feature_ids):
    """Split gain 0.5*[GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)]."""
    G = g.sum()
    H = h.sum()
    parent = G * G / (H + lam)
    best = (0.0, -1, 0.0)
    for f in feature_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cg = np.cumsum(g[order])[:-1]
        ch = np.cumsum(h[order])[:-1]
        valid = xs[1:] != xs[:-1]
        if not valid.any():
            continue
        gains = 0.5 * (cg * cg / (ch + lam) + (G - cg) ** 2 / (H - ch + lam) - parent)
        gains[~valid] = -np.inf
        i = int(np.argmax(gains))
        if gains[i] > best[0]:
            best = (float(gains[i]), int(f), float(0.5 * (xs[i] + xs[i + 1])))
    return best


def _grow_newton_tree(X, g, h, lam, max_depth):
    nodes: list[TreeNode] = []
    d = X.shape[1]
    features = np.arange(d)

    def grow(idx, depth):
        node_id = len(nodes)
        leaf = -g[idx].sum() / (h[idx].sum() + lam)
        nodes.append(TreeNode(leaf_value=float(leaf)))
        if depth >= max_depth or idx.size < 2:
            return node_id
        gain, f, thr = _best_newton_split(X[idx], g[idx], h[idx], lam, features)
        if f < 0 or gain <= 0:
            return node_id
        mask = X[idx, f] < thr
        left_id = grow(idx[mask], depth + 1)
        right_id = grow(idx[~mask], depth + 1)
        nodes[node_id] = TreeNode(f, thr, left_id, right_id, nodes[node_id].leaf_value)
        return node_id

    grow(np.arange(X.shape[0]), 0)
    return nodes


def _logloss(y, p, sample_weights=None):
    eps = 1e-12
    p = np.clip(p, eps, 1 - eps)
    ll = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    if sample_weights is not None:
        return float(np.mean(sample_weights * ll))
    return float(np.mean(ll))


def train_gbt(
    X: np.ndarray,
    y: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    pos_weight: float,
    rounds: int = 300,
    lr: float = 0.1,
    max_depth: int = 4,
    lam: float = 1.0,
    early_stop_patience: int = 20,
) -> GbtModel:
    """Second-order boosting on logistic loss with imbalance-aware gradient
    scaling; early-stops on validation logloss and keeps the best round."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    sw = np.where(y == 1, pos_weight, 1.0)

    n_pos_w = float(sw[y == 1].sum())
    n_neg_w = float(sw[y == 0].sum())
    base = float(np.log(max(n_pos_w, 1e-12) / max(n_neg_w, 1e-12)))

    f_train = np.full(X.shape[0], base)
    f_val = np.full(X_val.shape[0], base)
    trees: list = []
    train_hist: list = []
    val_hist: list = []
    best_val = np.inf
    best_round = 0
    since_best = 0
    for r in range(1, rounds + 1):
        p = _sigmoid(f_train)
        g = sw * (p - y)
        h = sw * p * (1.0 - p)
        nodes = _grow_newton_tree(X, g, h, lam, max_depth)
        trees.append(nodes)
        f_train += lr * _predict_tree(nodes, X)
        f_val += lr * _predict_tree(nodes, X_val)
        train_hist.append(_logloss(y, _sigmoid(f_train), sw))
        val_loss = _logloss(y_val, _sigmoid(f_val))
        val_hist.append(val_loss)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_round = r
            since_best = 0
        else:
            since_best += 1
            if since_best >= early_stop_patience:
                break
    if best_round == 0:
        best_round = len(trees)
    return GbtModel(trees[:best_round], base, lr, best_round, train_hist, val_hist)
