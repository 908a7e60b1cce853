"""Probabilistic multi-class classifier backends behind one interface.

Every fitted model exposes ``predict_proba(features) -> (m, K)`` where K is
the full class count fixed at fit time; classes absent from training keep
probability 0 in the output. Backends:

- random forest of CART classification trees (Gini, axis-aligned splits),
  soft-voting over per-tree leaf class frequencies;
- multinomial logistic regression fit by gradient descent with backtracking
  line search (features standardized internally);
- an external pass-through that wraps probability matrices produced by
  out-of-band models (file exchange handled in the io module).

Fits are deterministic given the SeededRng; ties in split selection break
toward the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .core import (
    DataError,
    DimensionMismatch,
    InvalidHyperparameter,
    SeededRng,
    ShapeMismatch,
)

N_TREES = 100

RF_HYPERPARAM_DOMAINS = {
    "max_depth": (4, 6, 8, 10),
    "max_features": (1.0, "sqrt", "log2"),
    "min_samples_leaf": (1, 2, 4),
    "max_samples": (0.6, 0.8, 1.0),
}

DEFAULT_RF_HP = {
    "max_depth": 10,
    "max_features": 1.0,
    "min_samples_leaf": 1,
    "max_samples": 1.0,
}

DEFAULT_SOFTMAX_HP = {"l2": 1e-3, "max_iter": 5000, "tol": 1e-6}


class ClassifierKind(str, Enum):
    RANDOM_FOREST = "random_forest"
    SOFTMAX = "softmax"
    EXTERNAL = "external"


@dataclass(frozen=True)
class ClassifierSpec:
    """Backend choice plus hyperparameters; n_classes is fixed at fit time."""

    kind: ClassifierKind
    hyperparams: dict = field(default_factory=dict)
    n_classes: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ClassifierKind(self.kind))
        validate_hyperparams(self.kind, self.hyperparams)


def validate_hyperparams(kind: ClassifierKind, hp: dict):
    if kind is ClassifierKind.RANDOM_FOREST:
        for key, value in hp.items():
            domain = RF_HYPERPARAM_DOMAINS.get(key)
            if domain is None:
                raise InvalidHyperparameter(f"unknown random-forest parameter {key!r}")
            if value not in domain:
                raise InvalidHyperparameter(
                    f"{key}={value!r} outside declared domain {domain}"
                )
    elif kind is ClassifierKind.SOFTMAX:
        for key, value in hp.items():
            if key == "l2":
                if not (isinstance(value, (int, float)) and value > 0):
                    raise InvalidHyperparameter("l2 must be > 0")
            elif key == "max_iter":
                if not (isinstance(value, int) and value >= 1):
                    raise InvalidHyperparameter("max_iter must be a positive integer")
            elif key == "tol":
                if not (isinstance(value, (int, float)) and value > 0):
                    raise InvalidHyperparameter("tol must be > 0")
            else:
                raise InvalidHyperparameter(f"unknown softmax parameter {key!r}")
    elif kind is ClassifierKind.EXTERNAL:
        if hp:
            raise InvalidHyperparameter("external classifiers take no hyperparameters")


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise DataError("labels must be a nonempty 1-D integer vector")
    labels = labels.astype(np.int64)
    if labels.min() < 1 or labels.max() > n_classes:
        raise DataError(
            f"labels must lie in 1..{n_classes}, got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def _expand_to_full(proba_present: np.ndarray, present: np.ndarray, n_classes: int):
    out = np.zeros((proba_present.shape[0], n_classes))
    out[:, present - 1] = proba_present
    return out


# ---------------------------------------------------------------------------
# CART tree / random forest.
# ---------------------------------------------------------------------------

@dataclass
class _Tree:
    feature: np.ndarray    # split feature per node, -1 for leaves
    threshold: np.ndarray  # split threshold (go left when x <= threshold)
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # (n_nodes, C) leaf class frequencies, zeros inside


def _best_split(X, y, idx, cand_features, min_leaf, n_present):
    """Lowest weighted-Gini split over candidate features.

    Candidates are scanned in ascending feature index and thresholds in
    ascending order with strict improvement only, so ties resolve to the
    lowest feature index, then the lowest threshold.
    """
    nn = idx.size
    best_score = math.inf
    best_feature = -1
    best_threshold = 0.0
    for f in cand_features:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xo = xs[order]
        yo = y[idx[order]]
        boundary = np.nonzero(xo[:-1] < xo[1:])[0]
        if boundary.size == 0:
            continue
        n_left = boundary + 1
        n_right = nn - n_left
        valid = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        boundary = boundary[valid]
        n_left = n_left[valid]
        n_right = n_right[valid]
        onehot = np.zeros((nn, n_present))
        onehot[np.arange(nn), yo] = 1.0
        cum = np.cumsum(onehot, axis=0)
        counts_left = cum[boundary]
        counts_right = cum[-1] - counts_left
        gini_left = 1.0 - (counts_left**2).sum(axis=1) / n_left**2
        gini_right = 1.0 - (counts_right**2).sum(axis=1) / n_right**2
        weighted = (n_left * gini_left + n_right * gini_right) / nn
        b = int(np.argmin(weighted))  # first minimum: lowest threshold
        if weighted[b] < best_score:
            lo, hi = xo[boundary[b]], xo[boundary[b] + 1]
            thr = (lo + hi) / 2.0
            if thr >= hi:  # midpoint rounded up to the right value
                thr = lo
            best_score = weighted[b]
            best_feature = int(f)
            best_threshold = float(thr)
    if best_feature < 0:
        return None
    return best_feature, best_threshold


def _grow_tree(X, y, n_present, max_depth, n_cand, min_leaf, rng: np.random.Generator):
    n, d = X.shape
    feature, threshold, left, right, value = [], [], [], [], []

    def add_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(np.zeros(n_present))
        return len(feature) - 1

    root = add_node()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=n_present).astype(np.float64)
        nn = idx.size
        split = None
        if depth < max_depth and nn >= 2 * min_leaf and counts.max() < nn:
            if n_cand >= d:
                cand = np.arange(d)
            else:
                cand = np.sort(rng.choice(d, size=n_cand, replace=False))
            split = _best_split(X, y, idx, cand, min_leaf, n_present)
        if split is None:
            value[node] = counts / nn
            continue
        f, thr = split
        mask = X[idx, f] <= thr
        node_left = add_node()
        node_right = add_node()
        feature[node] = f
        threshold[node] = thr
        left[node] = node_left
        right[node] = node_right
        stack.append((node_right, idx[~mask], depth + 1))
        stack.append((node_left, idx[mask], depth + 1))

    return _Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.vstack(value),
    )


def _tree_proba(tree: _Tree, X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    out = np.empty((n, tree.value.shape[1]))
    if n == 0:
        return out
    stack = [(0, np.arange(n))]
    while stack:
        node, rows = stack.pop()
        f = tree.feature[node]
        if f < 0:
            out[rows] = tree.value[node]
            continue
        mask = X[rows, f] <= tree.threshold[node]
        rows_left = rows[mask]
        rows_right = rows[~mask]
        if rows_left.size:
            stack.append((tree.left[node], rows_left))
        if rows_right.size:
            stack.append((tree.right[node], rows_right))
    return out


class RandomForestModel:
    """Fitted forest; probabilities are tree-averaged leaf frequencies."""

    kind = ClassifierKind.RANDOM_FOREST

    def __init__(self, trees, present_labels, n_classes, n_features, hyperparams):
        self.trees = trees
        self.present_labels = np.asarray(present_labels, dtype=np.int64)
        self.n_classes = int(n_classes)
        self.n_features = int(n_features)
        self.hyperparams = dict(hyperparams)

    def predict_proba(self, features) -> np.ndarray:
        X = _check_features(features, self.n_features)
        if X.shape[0] == 0:
            return np.zeros((0, self.n_classes))
        acc = np.zeros((X.shape[0], self.present_labels.size))
        for tree in self.trees:
            acc += _tree_proba(tree, X)
        acc /= len(self.trees)
        return _expand_to_full(acc, self.present_labels, self.n_classes)


def _check_features(features, n_features: int) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise DimensionMismatch(
            f"expected {n_features} feature columns, got shape {X.shape}"
        )
    return X


def _n_candidate_features(max_features, d: int) -> int:
    if max_features == 1.0 or max_features == "all":
        return d
    if max_features == "sqrt":
        return max(1, int(math.sqrt(d)))
    if max_features == "log2":
        return max(1, int(math.log2(d))) if d > 1 else 1
    raise InvalidHyperparameter(f"max_features={max_features!r}")


def fit_random_forest(
    features,
    labels,
    n_classes: int,
    hp: Optional[dict] = None,
    rng: SeededRng = SeededRng(0),
) -> RandomForestModel:
    """Fit a 100-tree CART classification forest.

    Each tree grows on a bootstrap subsample of fraction ``max_samples``,
    considering ``max_features`` candidate features per split, with depth
    and leaf-size limits from ``hp``. Per-tree RNG streams are derived from
    ``rng`` by tree index, so fits are reproducible regardless of execution
    order.
    """
    merged = dict(DEFAULT_RF_HP)
    if hp:
        validate_hyperparams(ClassifierKind.RANDOM_FOREST, hp)
        merged.update(hp)
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("features must be a nonempty 2-D matrix")
    y = _check_labels(labels, n_classes)
    if y.size != X.shape[0]:
        raise DimensionMismatch("features and labels disagree on sample count")

    present = np.unique(y)
    y_compact = np.searchsorted(present, y)
    n, d = X.shape
    n_cand = _n_candidate_features(merged["max_features"], d)
    n_boot = max(1, int(round(n * merged["max_samples"])))

    trees = []
    for t in range(N_TREES):
        gen = rng.derive("tree", t).generator()
        boot = gen.integers(0, n, size=n_boot)
        trees.append(
            _grow_tree(
                X[boot],
                y_compact[boot],
                present.size,
                merged["max_depth"],
                n_cand,
                merged["min_samples_leaf"],
                gen,
            )
        )
    return RandomForestModel(trees, present, n_classes, d, merged)


# ---------------------------------------------------------------------------
# Multinomial logistic regression (softmax).
# ---------------------------------------------------------------------------

class SoftmaxModel:
    """Fitted multinomial logistic model on internally standardized features."""

    kind = ClassifierKind.SOFTMAX

    def __init__(self, weights, intercept, mean, scale, keep, present_labels,
                 n_classes, n_features, hyperparams, converged):
        self.weights = weights        # (d_kept, C)
        self.intercept = intercept    # (C,)
        self.mean = mean
        self.scale = scale
        self.keep = keep              # bool mask of non-constant columns
        self.present_labels = np.asarray(present_labels, dtype=np.int64)
        self.n_classes = int(n_classes)
        self.n_features = int(n_features)
        self.hyperparams = dict(hyperparams)
        self.converged = bool(converged)

    def _logits(self, X: np.ndarray) -> np.ndarray:
        Z = (X[:, self.keep] - self.mean) / self.scale
        return Z @ self.weights + self.intercept

    def predict_proba(self, features) -> np.ndarray:
        X = _check_features(features, self.n_features)
        if X.shape[0] == 0:
            return np.zeros((0, self.n_classes))
        logits = self._logits(X)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return _expand_to_full(p, self.present_labels, self.n_classes)


def _softmax_objective(Z, onehot, W, b, l2):
    logits = Z @ W + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    ce = float(np.mean(logsum - (logits * onehot).sum(axis=1)))
    return ce + l2 * float((W**2).sum()), logits


def fit_softmax(
    features,
    labels,
    n_classes: int,
    hp: Optional[dict] = None,
    rng: SeededRng = SeededRng(0),
) -> SoftmaxModel:
    """Fit cross-entropy + l2*||W||^2 by gradient descent with backtracking.

    The intercept is not penalized. Convergence is declared when the
    gradient norm drops below ``tol``; hitting ``max_iter`` first leaves the
    model usable with ``converged = False``.
    """
    merged = dict(DEFAULT_SOFTMAX_HP)
    if hp:
        validate_hyperparams(ClassifierKind.SOFTMAX, hp)
        merged.update(hp)
    l2, max_iter, tol = merged["l2"], merged["max_iter"], merged["tol"]

    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("features must be a nonempty 2-D matrix")
    y = _check_labels(labels, n_classes)
    if y.size != X.shape[0]:
        raise DimensionMismatch("features and labels disagree on sample count")

    n, d = X.shape
    sd = X.std(axis=0)
    keep = sd > 0
    mu = X[:, keep].mean(axis=0)
    scale = sd[keep]
    Z = (X[:, keep] - mu) / scale if keep.any() else np.zeros((n, 0))

    present = np.unique(y)
    C = present.size
    y_compact = np.searchsorted(present, y)
    onehot = np.zeros((n, C))
    onehot[np.arange(n), y_compact] = 1.0

    W = np.zeros((Z.shape[1], C))
    b = np.zeros(C)
    step = 1.0
    converged = False
    obj, logits = _softmax_objective(Z, onehot, W, b, l2)
    for _ in range(max_iter):
        shifted = logits - logits.max(axis=1, keepdims=True)
        P = np.exp(shifted)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - onehot) / n
        gW = Z.T @ G + 2.0 * l2 * W
        gb = G.sum(axis=0)
        gnorm_sq = float((gW**2).sum() + (gb**2).sum())
        if math.sqrt(gnorm_sq) <= tol:
            converged = True
            break
        # Armijo backtracking on the full objective.
        while True:
            W_new = W - step * gW
            b_new = b - step * gb
            obj_new, logits_new = _softmax_objective(Z, onehot, W_new, b_new, l2)
            if obj_new <= obj - 1e-4 * step * gnorm_sq or step < 1e-16:
                break
            step *= 0.5
        W, b, obj, logits = W_new, b_new, obj_new, logits_new
        step = min(step * 1.5, 1e6)

    return SoftmaxModel(
        weights=W,
        intercept=b,
        mean=mu,
        scale=scale,
        keep=keep,
        present_labels=present,
        n_classes=n_classes,
        n_features=d,
        hyperparams=merged,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# External probability pass-through.
# ---------------------------------------------------------------------------

class ExternalModel:
    """Wraps a fixed probability matrix produced by an out-of-band model.

    ``predict_proba`` requires the query row count to match the stored
    matrix; there is no refitting. This is the exchange point for backends
    not implemented here (gradient boosting, transformer models, ...).
    """

    kind = ClassifierKind.EXTERNAL

    def __init__(self, probabilities: np.ndarray, n_features: Optional[int] = None):
        P = np.asarray(probabilities, dtype=np.float64)
        if P.ndim != 2 or P.shape[1] < 1:
            raise ShapeMismatch("probability matrix must be 2-D with K >= 1 columns")
        self.probabilities = P
        self.n_classes = P.shape[1]
        self.n_features = n_features

    def predict_proba(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"expected {self.n_features} feature columns, got {X.shape[1]}"
            )
        if X.shape[0] != self.probabilities.shape[0]:
            raise ShapeMismatch(
                f"external probabilities cover {self.probabilities.shape[0]} rows, "
                f"query has {X.shape[0]}"
            )
        return self.probabilities.copy()


def fit_classifier(spec: ClassifierSpec, features, labels, n_classes: int,
                   rng: SeededRng) -> "RandomForestModel | SoftmaxModel":
    """Dispatch on spec.kind; external models cannot be fit from data."""
    if spec.kind is ClassifierKind.RANDOM_FOREST:
        return fit_random_forest(features, labels, n_classes, spec.hyperparams, rng)
    if spec.kind is ClassifierKind.SOFTMAX:
        return fit_softmax(features, labels, n_classes, spec.hyperparams, rng)
    raise InvalidHyperparameter(
        "external classifiers are supplied as probability matrices, not fit"
    )
