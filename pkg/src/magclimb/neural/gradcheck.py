"""Central finite-difference verification of analytic gradients.

Run models in double precision; inputs should be sampled away from the
non-differentiable points (ReLU kink, pooling ties) for the comparison to be
meaningful.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from .graph import ModelGraph


def _loss_and_grads(graph: ModelGraph, x, targets, projection):
    graph.zero_grads()
    out = graph.forward(x, train=False)
    if targets is not None:
        loss = L.cross_entropy(out, targets)
        graph.backward_cross_entropy(out, targets)
    else:
        loss = float(np.sum(out * projection))
        graph.backward(projection.astype(graph.dtype))
    return loss, [g.copy() for g in graph.grads()]


def _loss_only(graph: ModelGraph, x, targets, projection):
    out = graph.forward(x, train=False)
    if targets is not None:
        return L.cross_entropy(out, targets)
    return float(np.sum(out * projection))


def gradient_check(graph: ModelGraph, x, targets=None, eps=1e-5) -> float:
    """Worst relative error between analytic and numeric parameter gradients.

    With ``targets`` the loss is softmax cross-entropy through the graph's
    softmax head; without, a fixed random projection of the raw output is
    used so every output path is exercised.
    """
    x = np.asarray(x, dtype=graph.dtype)
    projection = None
    if targets is None:
        shape_probe = graph.forward(x, train=False).shape
        projection = np.random.default_rng(12345).standard_normal(shape_probe)
    _, analytic = _loss_and_grads(graph, x, targets, projection)

    worst = 0.0
    for p_idx, param in enumerate(graph.params()):
        flat = param.reshape(-1)
        a_flat = analytic[p_idx].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            loss_hi = _loss_only(graph, x, targets, projection)
            flat[i] = original - eps
            loss_lo = _loss_only(graph, x, targets, projection)
            flat[i] = original
            numeric = (loss_hi - loss_lo) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-3)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst
