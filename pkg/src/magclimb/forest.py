"""Random forest of CART trees: Gini splitting, bootstrap sampling, and a
random sqrt-sized feature subset per split.  Deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


def gini_impurity(labels) -> float:
    """1 - sum of squared class fractions."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    _, counts = np.unique(labels, return_counts=True)
    frac = counts / labels.size
    return float(1.0 - np.sum(frac * frac))


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    label: int = -1

    @property
    def is_leaf(self):
        return self.left is None

    def to_dict(self):
        if self.is_leaf:
            return {"label": int(self.label)}
        return {"feature": int(self.feature), "threshold": float(self.threshold),
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @staticmethod
    def from_dict(raw):
        if "label" in raw:
            return _Node(label=raw["label"])
        return _Node(feature=raw["feature"], threshold=raw["threshold"],
                     left=_Node.from_dict(raw["left"]),
                     right=_Node.from_dict(raw["right"]))


def _majority(counts):
    return int(np.argmax(counts))  # ties: smallest label index


def _best_split_for_feature(values, y_onehot):
    """Scan all thresholds of one feature via prefix class counts.

    Returns (weighted_gini, threshold) or None when the feature is constant.
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    cum = np.cumsum(y_onehot[order], axis=0)
    n = len(v)
    total = cum[-1]
    # candidate split after position i (0-based): left = first i+1 rows
    boundaries = np.nonzero(v[:-1] < v[1:])[0]
    if boundaries.size == 0:
        return None
    n_left = (boundaries + 1).astype(float)
    n_right = n - n_left
    left_counts = cum[boundaries]
    right_counts = total - left_counts
    gini_left = 1.0 - np.sum((left_counts / n_left[:, None]) ** 2, axis=1)
    gini_right = 1.0 - np.sum((right_counts / n_right[:, None]) ** 2, axis=1)
    weighted = (n_left * gini_left + n_right * gini_right) / n
    best = int(np.argmin(weighted))  # ties: lowest threshold
    threshold = 0.5 * (v[boundaries[best]] + v[boundaries[best] + 1])
    return float(weighted[best]), float(threshold)


def _build_tree(x, y_onehot, rng, n_subset, max_depth, depth=0):
    node = _Node()
    counts = y_onehot.sum(axis=0)
    if np.count_nonzero(counts) == 1 or (max_depth is not None and depth >= max_depth):
        node.label = _majority(counts)
        return node

    n_features = x.shape[1]
    if n_subset >= n_features:
        features = np.arange(n_features)
    else:
        features = np.sort(rng.permutation(n_features)[:n_subset])
    best = None  # (impurity, feature, threshold)
    for f in features:
        found = _best_split_for_feature(x[:, f], y_onehot)
        if found is None:
            continue
        impurity, thr = found
        if best is None or impurity < best[0] - 1e-15:
            best = (impurity, int(f), thr)
    if best is None:
        node.label = _majority(counts)
        return node

    _, f, thr = best
    mask = x[:, f] <= thr
    node.feature = f
    node.threshold = thr
    node.left = _build_tree(x[mask], y_onehot[mask], rng, n_subset, max_depth, depth + 1)
    node.right = _build_tree(x[~mask], y_onehot[~mask], rng, n_subset, max_depth, depth + 1)
    return node


def _predict_tree(node, row):
    while not node.is_leaf:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node.label


@dataclass
class RandomForest:
    trees: list
    n_classes: int

    def predict_one(self, row) -> int:
        votes = np.zeros(self.n_classes, dtype=int)
        for tree in self.trees:
            votes[_predict_tree(tree, row)] += 1
        return int(np.argmax(votes))  # ties: smallest class index

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([self.predict_one(row) for row in x], dtype=int)

    def to_json(self) -> str:
        return json.dumps({"format": "magclimb-forest",
                           "n_classes": self.n_classes,
                           "trees": [t.to_dict() for t in self.trees]})

    @staticmethod
    def from_json(text: str) -> "RandomForest":
        raw = json.loads(text)
        if raw.get("format") != "magclimb-forest":
            raise ConfigurationError("not a forest model file")
        return RandomForest(trees=[_Node.from_dict(t) for t in raw["trees"]],
                            n_classes=raw["n_classes"])


def _prepare(features, labels, n_classes):
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or len(x) == 0:
        raise ConfigurationError("training set must be a non-empty 2-D feature array")
    if len(x) != len(y):
        raise ConfigurationError("feature/label counts differ")
    if n_classes is None:
        n_classes = int(np.max(y)) + 1
    onehot = np.zeros((len(y), n_classes))
    onehot[np.arange(len(y)), y] = 1.0
    return x, onehot, n_classes


def cart_train(features, labels, max_depth=None, n_classes=None) -> RandomForest:
    """Single CART tree on the full sample with all features (no bagging)."""
    x, onehot, n_classes = _prepare(features, labels, n_classes)
    rng = np.random.default_rng(0)  # unused: full feature set
    tree = _build_tree(x, onehot, rng, x.shape[1], max_depth)
    return RandomForest(trees=[tree], n_classes=n_classes)


def rf_train(features, labels, trees=100, seed=0, max_depth=None,
             n_classes=None) -> RandomForest:
    """Fit bootstrap-sampled CART trees voting by majority."""
    x, onehot, n_classes = _prepare(features, labels, n_classes)
    n_subset = max(1, int(round(math.sqrt(x.shape[1]))))
    rng = np.random.default_rng(seed)
    grown = []
    for _ in range(trees):
        idx = rng.integers(0, len(x), size=len(x))
        grown.append(_build_tree(x[idx], onehot[idx], rng, n_subset, max_depth))
    return RandomForest(trees=grown, n_classes=n_classes)


def rf_classify(forest: RandomForest, query) -> int:
    return forest.predict_one(np.asarray(query, dtype=float))
