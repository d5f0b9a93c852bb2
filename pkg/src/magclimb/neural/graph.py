"""Sequential model container plus manifest+blob persistence.

A model serializes to two files: ``<prefix>.json`` describing layer kinds,
hyperparameters and parameter shapes, and ``<prefix>.bin`` holding every
parameter as little-endian float32 in manifest order.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import ConfigurationError, ShapeError
from . import layers as L

LAYER_KINDS = {
    cls.kind: cls
    for cls in (L.Conv1D, L.AdaptiveReLU, L.ReLU, L.MaxPool1D, L.Dropout,
                L.LSTM, L.RNN, L.Dense, L.Flatten, L.Softmax)
}


class ModelGraph:
    """A layer pipeline with shared dtype and a single dropout RNG."""

    def __init__(self, layer_list, dtype=np.float32):
        self.layers = list(layer_list)
        self.dtype = dtype

    # -- plumbing ----------------------------------------------------------

    def set_rng(self, rng: np.random.Generator):
        for layer in self.layers:
            if isinstance(layer, L.Dropout):
                layer.rng = rng

    def init_params(self, rng: np.random.Generator):
        for layer in self.layers:
            if hasattr(layer, "init_params"):
                layer.init_params(rng)
        return self

    def param_items(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.param_items():
                out.append((f"{i}.{layer.kind}.{name}", arr))
        return out

    def params(self):
        return [arr for _, arr in self.param_items()]

    def grads(self):
        out = []
        for layer in self.layers:
            for _, arr in layer.grad_items():
                out.append(arr)
        return out

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def get_state(self):
        return [arr.copy() for arr in self.params()]

    def set_state(self, state):
        for arr, saved in zip(self.params(), state):
            arr[:] = saved

    # -- compute -----------------------------------------------------------

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        rank3 = x.ndim == 3
        try:
            for layer in self.layers:
                x = layer.forward(x, train=train)
        except ShapeError as exc:
            if rank3 and "shorter than" in str(exc):
                raise ShapeError(f"{exc}; minimum supported input length is "
                                 f"{self.minimum_input_length()}") from None
            raise
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def backward_cross_entropy(self, probs, targets):
        """Start backprop from the fused softmax+cross-entropy gradient."""
        if not isinstance(self.layers[-1], L.Softmax):
            raise ShapeError("fused cross-entropy backward needs a softmax head")
        grad = L.softmax_cross_entropy_grad(probs, targets).astype(self.dtype)
        for layer in reversed(self.layers[:-1]):
            grad = layer.backward(grad)
        return grad

    def predict_proba(self, x):
        return self.forward(x, train=False)

    def predict(self, x):
        return np.argmax(self.predict_proba(x), axis=1)

    def minimum_input_length(self):
        """Smallest time dimension the conv/pool stack accepts."""
        lo, hi = 1, 1
        while hi < 1 << 20:
            if self._accepts_length(hi):
                break
            hi *= 2
        else:
            raise ShapeError("layer stack consumes any input length")
        while lo < hi:
            mid = (lo + hi) // 2
            if self._accepts_length(mid):
                hi = mid
            else:
                lo = mid + 1
        return lo

    def _accepts_length(self, n):
        try:
            for layer in self.layers:
                n = layer.out_length(n)
            return True
        except ShapeError:
            return False

    # -- persistence ---------------------------------------------------------

    def manifest(self) -> dict:
        return {
            "format": "magclimb-model",
            "dtype": "float32",
            "layers": [
                {
                    "kind": layer.kind,
                    "hyperparams": layer.hyperparams(),
                    "params": [{"name": n, "shape": list(a.shape)}
                               for n, a in layer.param_items()],
                }
                for layer in self.layers
            ],
        }

    def save(self, prefix) -> tuple:
        """Write ``<prefix>.json`` + ``<prefix>.bin``; returns both paths."""
        manifest_path = f"{prefix}.json"
        blob_path = f"{prefix}.bin"
        with open(manifest_path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2)
            fh.write("\n")
        with open(blob_path, "wb") as fh:
            for _, arr in self.param_items():
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return manifest_path, blob_path

    @staticmethod
    def load(prefix, dtype=np.float32) -> "ModelGraph":
        with open(f"{prefix}.json") as fh:
            manifest = json.load(fh)
        if manifest.get("format") != "magclimb-model":
            raise ConfigurationError(f"{prefix}.json is not a model manifest")
        layer_list = []
        for entry in manifest["layers"]:
            cls = LAYER_KINDS.get(entry["kind"])
            if cls is None:
                raise ConfigurationError(f"unknown layer kind {entry['kind']!r}")
            hp = dict(entry["hyperparams"])
            if entry["params"]:
                hp["dtype"] = dtype
            layer_list.append(cls(**hp))
        graph = ModelGraph(layer_list, dtype=dtype)
        raw = np.fromfile(f"{prefix}.bin", dtype="<f4")
        offset = 0
        for entry, layer in zip(manifest["layers"], graph.layers):
            for pspec, (name, arr) in zip(entry["params"], layer.param_items()):
                if pspec["name"] != name or list(arr.shape) != pspec["shape"]:
                    raise ConfigurationError(
                        f"manifest/blob mismatch at {entry['kind']}.{name}")
                count = arr.size
                arr[:] = raw[offset:offset + count].reshape(arr.shape).astype(dtype)
                offset += count
        if offset != raw.size:
            raise ConfigurationError("parameter blob size does not match manifest")
        return graph
