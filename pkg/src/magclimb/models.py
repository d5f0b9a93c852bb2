"""Hazard classifiers: the conv+LSTM network with adaptive activations, the
recurrent/dense baselines, and the feature-based classical baselines (random
forest, k-nearest-neighbors), plus the shared training and evaluation loop.

Sequence models consume raw normalized windows shaped (n, time); the
feature-based models consume the five summary statistics of each window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import IntEnum

import numpy as np

from . import neural
from .errors import ConfigurationError, TrainingError
from .forest import RandomForest, rf_train, rf_classify
from .neural import ModelGraph
from .neural import layers as L
from .neural.graph import LAYER_KINDS
from .neural.optim import Adam

MODEL_KINDS = ("icnn_lstm", "lstm", "rnn", "bp", "rf", "knn")
FEATURE_BASED = ("bp", "rf", "knn")
FEATURE_NAMES = ("mean", "variance", "max", "min", "norm")


class HazardLabel(IntEnum):
    SAFE = 0
    POTENTIAL_HAZARD = 1
    HAZARD_OCCURRED = 2

    @property
    def display(self) -> str:
        return {0: "Safe", 1: "Potential Hazard", 2: "Hazard Occurred"}[int(self)]


def one_hot(label, classes: int = 3) -> np.ndarray:
    """Unit basis vector at the label index."""
    idx = int(label)
    if not 0 <= idx < classes:
        raise ConfigurationError(f"label {label} outside 0..{classes - 1}")
    vec = np.zeros(classes)
    vec[idx] = 1.0
    return vec


@dataclass(frozen=True)
class IcnnLstmConfig:
    conv_blocks: int = 2
    filters: int = 64
    kernel: int = 3
    pool_window: int = 2      # 1 disables pooling entirely
    dropout_rate: float = 0.2
    lstm_hidden: int = 64
    classes: int = 3
    in_channels: int = 1

    def __post_init__(self):
        if min(self.conv_blocks, self.filters, self.kernel, self.pool_window,
               self.lstm_hidden, self.classes, self.in_channels) < 1:
            raise ConfigurationError("all architecture counts must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch: int = 32
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    checkpoint_path: str | None = None
    val_fraction: float = 0.15

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.patience < 0:
            raise ConfigurationError("patience must be >= 0")


# ---------------------------------------------------------------------------
# model builders
# ---------------------------------------------------------------------------

def build_icnn_lstm(cfg: IcnnLstmConfig = IcnnLstmConfig(), seed: int = 0,
                    dtype=np.float32) -> ModelGraph:
    """Conv blocks (conv -> adaptive relu -> pool -> dropout) feeding an LSTM,
    flattened over time into the softmax classifier head."""
    layer_list = []
    in_ch = cfg.in_channels
    for _ in range(cfg.conv_blocks):
        layer_list.append(L.Conv1D(in_ch, cfg.filters, cfg.kernel, padding="same",
                                   dtype=dtype))
        layer_list.append(L.AdaptiveReLU(cfg.filters, dtype=dtype))
        if cfg.pool_window > 1:
            layer_list.append(L.MaxPool1D(cfg.pool_window))
        layer_list.append(L.Dropout(cfg.dropout_rate))
        in_ch = cfg.filters
    layer_list.append(L.LSTM(in_ch, cfg.lstm_hidden, dtype=dtype))
    layer_list.append(L.Flatten())
    layer_list.append(_DeferredDense(cfg.lstm_hidden, cfg.classes, dtype=dtype))
    layer_list.append(L.Softmax())
    graph = ModelGraph(layer_list, dtype=dtype)
    graph.init_params(np.random.default_rng(seed))
    return graph


class _DeferredDense(L.Dense):
    """Dense layer whose input width is fixed on the first forward pass.

    The flattened LSTM output width depends on the window length, which is a
    dataset property rather than an architecture one.
    """

    kind = "dense"

    def __init__(self, per_step, out_size, dtype=np.float32):
        super().__init__(per_step, out_size, dtype=dtype)
        self._per_step = per_step
        self._rng_state = None
        self._bound = False

    def init_params(self, rng):
        # remember a private stream so late binding stays deterministic
        self._rng_state = np.random.default_rng(rng.integers(0, 2 ** 32))
        if self._bound:
            super().init_params(self._rng_state)

    def bind(self, in_size):
        self.in_size = in_size
        self.weight = np.zeros((in_size, self.out_size), dtype=self.dtype)
        self.weight_grad = np.zeros_like(self.weight)
        self._bound = True
        if self._rng_state is not None:
            super().init_params(self._rng_state)

    def forward(self, x, train=False):
        if not self._bound:
            self.bind(x.shape[1])
        elif x.shape[1] != self.in_size:
            raise ConfigurationError(
                f"classifier head was bound to width {self.in_size}, got {x.shape[1]}")
        return super().forward(x, train=train)


def build_lstm_baseline(in_channels: int = 1, hidden: int = 64, dense_hidden: int = 32,
                        classes: int = 3, seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Three stacked LSTM layers, last hidden state into two dense layers."""
    graph = ModelGraph([
        L.LSTM(in_channels, hidden, dtype=dtype),
        L.LSTM(hidden, hidden, dtype=dtype),
        L.LSTM(hidden, hidden, dtype=dtype),
        _LastStep(),
        L.Dense(hidden, dense_hidden, dtype=dtype),
        L.ReLU(),
        L.Dense(dense_hidden, classes, dtype=dtype),
        L.Softmax(),
    ], dtype=dtype)
    graph.init_params(np.random.default_rng(seed))
    return graph


def build_rnn_baseline(in_channels: int = 1, hidden: int = 64, dense_hidden: int = 32,
                       classes: int = 3, trunc_len: int | None = None, seed: int = 0,
                       dtype=np.float32) -> ModelGraph:
    """Two tanh recurrent layers with configurable gradient truncation."""
    graph = ModelGraph([
        L.RNN(in_channels, hidden, trunc_len=trunc_len, dtype=dtype),
        L.RNN(hidden, hidden, trunc_len=trunc_len, dtype=dtype),
        _LastStep(),
        L.Dense(hidden, dense_hidden, dtype=dtype),
        L.ReLU(),
        L.Dense(dense_hidden, classes, dtype=dtype),
        L.Softmax(),
    ], dtype=dtype)
    graph.init_params(np.random.default_rng(seed))
    return graph


def build_bp_baseline(in_features: int = 5, hidden: int = 100, classes: int = 3,
                      seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Plain feed-forward classifier over window summary features."""
    graph = ModelGraph([
        L.Dense(in_features, hidden, dtype=dtype),
        L.ReLU(),
        L.Dense(hidden, hidden, dtype=dtype),
        L.ReLU(),
        L.Dense(hidden, classes, dtype=dtype),
        L.Softmax(),
    ], dtype=dtype)
    graph.init_params(np.random.default_rng(seed))
    return graph


class _LastStep(L.Layer):
    """Select the final time step of a sequence output."""

    kind = "last_step"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x[:, -1, :]

    def backward(self, grad):
        dx = np.zeros(self._shape, dtype=grad.dtype)
        dx[:, -1, :] = grad
        return dx

    def hyperparams(self):
        return {}


LAYER_KINDS["last_step"] = _LastStep


# ---------------------------------------------------------------------------
# window features and classical baselines
# ---------------------------------------------------------------------------

def sliding_window_features(window) -> np.ndarray:
    """[mean, population variance, max, min, Euclidean norm] of one window."""
    w = np.asarray(window, dtype=float)
    if w.size == 0:
        raise ConfigurationError("empty window")
    return np.array([np.mean(w), np.var(w), np.max(w), np.min(w),
                     np.linalg.norm(w)])


def window_feature_matrix(windows) -> np.ndarray:
    """sliding_window_features for a (n, time) stack of windows."""
    w = np.asarray(windows, dtype=float)
    return np.stack([np.mean(w, axis=1), np.var(w, axis=1), np.max(w, axis=1),
                     np.min(w, axis=1), np.linalg.norm(w, axis=1)], axis=1)


def knn_classify(train_features, train_labels, query, k: int = 5) -> int:
    """Majority label of the k nearest training points by Euclidean distance.

    Vote ties resolve to the smallest label index; distance ties to the
    earlier training index.
    """
    x = np.asarray(train_features, dtype=float)
    y = np.asarray(train_labels, dtype=int)
    if len(x) == 0:
        raise ConfigurationError("empty training set")
    if k > len(x):
        raise ConfigurationError(f"k={k} exceeds training size {len(x)}")
    d = np.linalg.norm(x - np.asarray(query, dtype=float), axis=1)
    nearest = np.argsort(d, kind="stable")[:k]
    votes = np.bincount(y[nearest])
    return int(np.argmax(votes))


def knn_classify_batch(train_features, train_labels, queries, k: int = 5) -> np.ndarray:
    return np.array([knn_classify(train_features, train_labels, q, k)
                     for q in np.asarray(queries, dtype=float)], dtype=int)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


def _stratified_indices(labels, fraction, rng):
    """Pick ~fraction of indices per class (at least one where possible)."""
    picked = []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        n = min(len(idx) - 1, max(1, int(round(fraction * len(idx)))))
        if n <= 0:
            continue
        picked.append(rng.permutation(idx)[:n])
    if not picked:
        return np.array([], dtype=int)
    return np.sort(np.concatenate(picked))


def train(model: ModelGraph, inputs, labels, cfg: TrainConfig = TrainConfig()) -> TrainHistory:
    """Mini-batch Adam with per-epoch validation, early stopping, and
    best-checkpoint restore.

    A validation slice (cfg.val_fraction, stratified) is carved from the
    training data; training stops once the validation loss has not improved
    for more than ``patience`` consecutive epochs.  The parameters giving the
    lowest validation loss are restored (and written to ``checkpoint_path``
    when set).  Fully deterministic for a fixed seed.
    """
    x = np.asarray(inputs, dtype=model.dtype)
    y = np.asarray(labels, dtype=int)
    if len(x) == 0:
        raise TrainingError("empty training set")
    classes = model.forward(x[:1]).shape[1]
    targets = np.zeros((len(y), classes), dtype=model.dtype)
    targets[np.arange(len(y)), y] = 1.0

    rng = np.random.default_rng(cfg.seed)
    model.set_rng(np.random.default_rng(rng.integers(0, 2 ** 32)))

    val_idx = _stratified_indices(y, cfg.val_fraction, rng)
    train_mask = np.ones(len(y), dtype=bool)
    train_mask[val_idx] = False
    x_tr, y_tr, t_tr = x[train_mask], y[train_mask], targets[train_mask]
    if val_idx.size:
        x_val, y_val, t_val = x[val_idx], y[val_idx], targets[val_idx]
    else:
        x_val, y_val, t_val = x_tr, y_tr, t_tr  # tiny sets: validate on train

    optimizer = Adam(model.params(), lr=cfg.lr)
    history = TrainHistory()
    best_loss = np.inf
    best_state = model.get_state()
    streak = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x_tr))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch):
            batch = order[start:start + cfg.batch]
            model.zero_grads()
            probs = model.forward(x_tr[batch], train=True)
            loss = neural.cross_entropy(probs, t_tr[batch])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch}")
            model.backward_cross_entropy(probs, t_tr[batch])
            optimizer.step(model.grads())
            epoch_loss += loss * len(batch)
        history.train_loss.append(epoch_loss / len(order))
        history.train_acc.append(float(np.mean(model.predict(x_tr) == y_tr)))

        val_probs = model.forward(x_val, train=False)
        val_loss = neural.cross_entropy(val_probs, t_val)
        history.val_loss.append(val_loss)
        history.val_acc.append(float(np.mean(np.argmax(val_probs, axis=1) == y_val)))

        if val_loss < best_loss:
            best_loss = val_loss
            best_state = model.get_state()
            history.best_epoch = epoch
            streak = 0
        else:
            streak += 1
            if streak > cfg.patience:
                history.stopped_epoch = epoch
                break
    else:
        history.stopped_epoch = cfg.epochs - 1

    model.set_state(best_state)
    if cfg.checkpoint_path:
        model.save(cfg.checkpoint_path)
    return history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray        # rows = true label, cols = predicted
    per_class_recall: list
    history: TrainHistory | None = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "per_class_recall": self.per_class_recall,
            "history": self.history.to_dict() if self.history else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def confusion_text(self) -> str:
        labels = [HazardLabel(i).display for i in range(self.confusion.shape[0])]
        width = max(len(s) for s in labels) + 2
        lines = [" " * width + "".join(f"{s:>{width}}" for s in labels)]
        for i, row in enumerate(self.confusion):
            lines.append(f"{labels[i]:>{width}}" +
                         "".join(f"{int(v):>{width}}" for v in row))
        return "\n".join(lines)


def confusion_report(y_true, y_pred, classes: int = 3,
                     history: TrainHistory | None = None) -> EvalReport:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if len(y_true) == 0:
        raise ConfigurationError("empty evaluation set")
    confusion = np.zeros((classes, classes), dtype=int)
    for t, p in zip(y_true, y_pred):
        confusion[t, p] += 1
    recall = []
    for i in range(classes):
        total = confusion[i].sum()
        recall.append(float(confusion[i, i] / total) if total else float("nan"))
    return EvalReport(accuracy=float(np.mean(y_true == y_pred)),
                      confusion=confusion, per_class_recall=recall,
                      history=history)


# ---------------------------------------------------------------------------
# unified classifier front end
# ---------------------------------------------------------------------------

@dataclass
class FittedClassifier:
    """One trained model of any kind behind a common predict interface."""

    kind: str
    graph: ModelGraph | None = None
    forest: RandomForest | None = None
    knn_features: np.ndarray | None = None
    knn_labels: np.ndarray | None = None
    knn_k: int = 5
    history: TrainHistory | None = None

    def predict(self, windows) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        if self.kind in ("icnn_lstm", "lstm", "rnn"):
            return self.graph.predict(windows[:, :, None])
        feats = window_feature_matrix(windows)
        if self.kind == "bp":
            return self.graph.predict(feats)
        if self.kind == "rf":
            return self.forest.predict(feats)
        if self.kind == "knn":
            return knn_classify_batch(self.knn_features, self.knn_labels,
                                      feats, self.knn_k)
        raise ConfigurationError(f"unknown model kind {self.kind!r}")

    def save(self, prefix) -> list:
        if self.graph is not None:
            paths = list(self.graph.save(prefix))
        elif self.forest is not None:
            path = f"{prefix}.json"
            with open(path, "w") as fh:
                fh.write(self.forest.to_json())
            paths = [path]
        else:
            path = f"{prefix}.json"
            with open(path, "w") as fh:
                json.dump({"format": "magclimb-knn", "k": self.knn_k,
                           "features": self.knn_features.tolist(),
                           "labels": self.knn_labels.tolist()}, fh)
            paths = [path]
        kind_path = f"{prefix}.kind.json"
        with open(kind_path, "w") as fh:
            json.dump({"kind": self.kind}, fh)
        return paths + [kind_path]

    @staticmethod
    def load(prefix) -> "FittedClassifier":
        with open(f"{prefix}.kind.json") as fh:
            kind = json.load(fh)["kind"]
        if kind in ("icnn_lstm", "lstm", "rnn", "bp"):
            return FittedClassifier(kind=kind, graph=ModelGraph.load(prefix))
        with open(f"{prefix}.json") as fh:
            raw = json.load(fh)
        if kind == "rf":
            return FittedClassifier(kind=kind,
                                    forest=RandomForest.from_json(json.dumps(raw)))
        return FittedClassifier(kind=kind,
                                knn_features=np.array(raw["features"], dtype=float),
                                knn_labels=np.array(raw["labels"], dtype=int),
                                knn_k=raw["k"])


def train_classifier(kind: str, windows, labels, cfg: TrainConfig = TrainConfig(),
                     icnn_cfg: IcnnLstmConfig | None = None,
                     rnn_trunc: int | None = None,
                     rf_trees: int = 100, knn_k: int = 5) -> FittedClassifier:
    """Fit any of the supported classifiers on normalized windows."""
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    windows = np.asarray(windows, dtype=float)
    labels = np.asarray(labels, dtype=int)

    if kind in ("icnn_lstm", "lstm", "rnn"):
        if kind == "icnn_lstm":
            graph = build_icnn_lstm(icnn_cfg or IcnnLstmConfig(), seed=cfg.seed)
        elif kind == "lstm":
            graph = build_lstm_baseline(seed=cfg.seed)
        else:
            graph = build_rnn_baseline(trunc_len=rnn_trunc, seed=cfg.seed)
        history = train(graph, windows[:, :, None], labels, cfg)
        return FittedClassifier(kind=kind, graph=graph, history=history)

    feats = window_feature_matrix(windows)
    if kind == "bp":
        graph = build_bp_baseline(in_features=feats.shape[1], seed=cfg.seed)
        history = train(graph, feats, labels, cfg)
        return FittedClassifier(kind=kind, graph=graph, history=history)
    if kind == "rf":
        forest = rf_train(feats, labels, trees=rf_trees, seed=cfg.seed, n_classes=3)
        return FittedClassifier(kind=kind, forest=forest)
    return FittedClassifier(kind="knn", knn_features=feats, knn_labels=labels,
                            knn_k=knn_k)


def evaluate(model, windows, labels, classes: int = 3) -> EvalReport:
    """Accuracy, confusion matrix, and per-class recall on a held-out set."""
    predictions = model.predict(np.asarray(windows, dtype=float))
    report = confusion_report(labels, predictions, classes=classes)
    report.history = getattr(model, "history", None)
    return report
