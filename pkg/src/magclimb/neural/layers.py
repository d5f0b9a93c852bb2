"""Differentiable layers with exact analytic gradients.

Tensors are plain numpy arrays shaped (batch, time, channels) for sequence
layers and (batch, features) for dense layers.  Every layer caches what its
backward pass needs; ``backward`` returns the gradient w.r.t. the input and
accumulates parameter gradients in matching ``*_grad`` arrays.

Convolution uses the cross-correlation convention (kernels are not flipped).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError

_DEBUG = bool(os.environ.get("MAGCLIMB_DEBUG"))


def _check_finite(name, x):
    if _DEBUG and not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values after {name}")


def glorot_uniform(rng, fan_in, fan_out, shape, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class; layers without parameters inherit the empty accessors."""

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def param_items(self):
        return []

    def grad_items(self):
        return []

    def zero_grads(self):
        for _, g in self.grad_items():
            g[:] = 0.0

    def out_length(self, in_length):
        return in_length


class Conv1D(Layer):
    kind = "conv1d"

    def __init__(self, in_channels, out_channels, width, padding="valid",
                 dtype=np.float32):
        if padding not in ("valid", "same"):
            raise ShapeError(f"padding must be 'valid' or 'same', got {padding!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.width = width
        self.padding = padding
        self.dtype = dtype
        self.kernel = np.zeros((width, in_channels, out_channels), dtype=dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.kernel_grad = np.zeros_like(self.kernel)
        self.bias_grad = np.zeros_like(self.bias)
        self._cache = None

    def init_params(self, rng):
        fan_in = self.width * self.in_channels
        fan_out = self.width * self.out_channels
        self.kernel = glorot_uniform(rng, fan_in, fan_out, self.kernel.shape, self.dtype)
        self.bias = np.zeros(self.out_channels, dtype=self.dtype)
        self.kernel_grad = np.zeros_like(self.kernel)
        self.bias_grad = np.zeros_like(self.bias)

    def param_items(self):
        return [("kernel", self.kernel), ("bias", self.bias)]

    def grad_items(self):
        return [("kernel", self.kernel_grad), ("bias", self.bias_grad)]

    def out_length(self, in_length):
        if self.padding == "same":
            return in_length
        out = in_length - self.width + 1
        if out < 1:
            raise ShapeError(
                f"input length {in_length} shorter than kernel width {self.width}")
        return out

    def _pad(self, x):
        if self.padding == "valid":
            return x, 0
        left = (self.width - 1) // 2
        right = self.width - 1 - left
        return np.pad(x, ((0, 0), (left, right), (0, 0))), left

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeError(
                f"conv1d expects (batch, time, {self.in_channels}), got {x.shape}")
        self.out_length(x.shape[1])
        padded, _ = self._pad(x)
        patches = np.lib.stride_tricks.sliding_window_view(padded, self.width, axis=1)
        # (B, T_out, C, width) -> (B, T_out, width*C)
        patches = patches.transpose(0, 1, 3, 2)
        b, t_out = patches.shape[0], patches.shape[1]
        flat = np.ascontiguousarray(patches).reshape(b * t_out, self.width * self.in_channels)
        out = flat @ self.kernel.reshape(-1, self.out_channels) + self.bias
        self._cache = (x.shape, flat)
        out = out.reshape(b, t_out, self.out_channels)
        _check_finite("conv1d", out)
        return out

    def backward(self, grad):
        x_shape, flat = self._cache
        b, t_out = grad.shape[0], grad.shape[1]
        gflat = grad.reshape(b * t_out, self.out_channels)
        self.kernel_grad += (flat.T @ gflat).reshape(self.kernel.shape)
        self.bias_grad += gflat.sum(axis=0)
        dpatches = (gflat @ self.kernel.reshape(-1, self.out_channels).T)
        dpatches = dpatches.reshape(b, t_out, self.width, self.in_channels)
        left = 0 if self.padding == "valid" else (self.width - 1) // 2
        right = 0 if self.padding == "valid" else self.width - 1 - left
        dx_pad = np.zeros((b, x_shape[1] + left + right, self.in_channels),
                          dtype=grad.dtype)
        for w in range(self.width):
            dx_pad[:, w:w + t_out, :] += dpatches[:, :, w, :]
        return dx_pad[:, left:left + x_shape[1], :]

    def hyperparams(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "width": self.width, "padding": self.padding}


class AdaptiveReLU(Layer):
    """max(0, z) + alpha * min(0, z) with one learnable slope per channel."""

    kind = "adaptive_relu"

    def __init__(self, channels, init_slope=0.25, dtype=np.float32):
        self.channels = channels
        self.init_slope = init_slope
        self.dtype = dtype
        self.alpha = np.full(channels, init_slope, dtype=dtype)
        self.alpha_grad = np.zeros_like(self.alpha)
        self._cache = None

    def init_params(self, rng):
        self.alpha = np.full(self.channels, self.init_slope, dtype=self.dtype)
        self.alpha_grad = np.zeros_like(self.alpha)

    def param_items(self):
        return [("alpha", self.alpha)]

    def grad_items(self):
        return [("alpha", self.alpha_grad)]

    def forward(self, x, train=False):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {x.shape}")
        neg = np.minimum(x, 0.0)
        out = np.maximum(x, 0.0) + self.alpha * neg
        self._cache = (x > 0.0, neg)
        return out

    def backward(self, grad):
        positive, neg = self._cache
        axes = tuple(range(grad.ndim - 1))
        self.alpha_grad += np.sum(grad * neg, axis=axes)
        return grad * np.where(positive, 1.0, self.alpha)

    def hyperparams(self):
        return {"channels": self.channels, "init_slope": self.init_slope}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._mask = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * self._mask

    def hyperparams(self):
        return {}


class MaxPool1D(Layer):
    """Non-overlapping max over time; a trailing partial window is dropped.

    Window 1 is the identity.  Backward routes each gradient to the earliest
    position attaining the maximum.
    """

    kind = "maxpool1d"

    def __init__(self, window):
        if window < 1:
            raise ShapeError("pool window must be >= 1")
        self.window = window
        self._cache = None

    def out_length(self, in_length):
        out = in_length // self.window
        if out < 1:
            raise ShapeError(
                f"input length {in_length} shorter than pool window {self.window}")
        return out

    def forward(self, x, train=False):
        b, t, c = x.shape
        t_out = self.out_length(t)
        view = x[:, :t_out * self.window, :].reshape(b, t_out, self.window, c)
        argmax = np.argmax(view, axis=2)
        out = np.take_along_axis(view, argmax[:, :, None, :], axis=2)[:, :, 0, :]
        self._cache = (x.shape, argmax)
        return out

    def backward(self, grad):
        x_shape, argmax = self._cache
        b, t_out, c = grad.shape
        dview = np.zeros((b, t_out, self.window, c), dtype=grad.dtype)
        np.put_along_axis(dview, argmax[:, :, None, :], grad[:, :, None, :], axis=2)
        dx = np.zeros(x_shape, dtype=grad.dtype)
        dx[:, :t_out * self.window, :] = dview.reshape(b, t_out * self.window, c)
        return dx

    def hyperparams(self):
        return {"window": self.window}


class Dropout(Layer):
    """Inverted dropout: scaled Bernoulli mask in training, identity at inference."""

    kind = "dropout"

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ShapeError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = np.random.default_rng(0)
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask

    def hyperparams(self):
        return {"rate": self.rate}


@dataclass
class LstmState:
    """Hidden and cell state of one LSTM layer for a batch."""

    hidden: np.ndarray
    cell: np.ndarray


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class LSTM(Layer):
    """Standard LSTM over a full sequence, gates in [input, forget, cand, output]
    order inside the stacked weight matrices. Returns hidden states for every
    time step; backward is full backpropagation through time.
    """

    kind = "lstm"

    def __init__(self, in_size, hidden, dtype=np.float32):
        self.in_size = in_size
        self.hidden = hidden
        self.dtype = dtype
        self.w_in = np.zeros((in_size, 4 * hidden), dtype=dtype)
        self.w_rec = np.zeros((hidden, 4 * hidden), dtype=dtype)
        self.bias = np.zeros(4 * hidden, dtype=dtype)
        self.w_in_grad = np.zeros_like(self.w_in)
        self.w_rec_grad = np.zeros_like(self.w_rec)
        self.bias_grad = np.zeros_like(self.bias)
        self._cache = None

    def init_params(self, rng):
        h = self.hidden
        self.w_in = glorot_uniform(rng, self.in_size, h, (self.in_size, 4 * h), self.dtype)
        limit = 1.0 / math.sqrt(h)
        self.w_rec = rng.uniform(-limit, limit, size=(h, 4 * h)).astype(self.dtype)
        self.bias = np.zeros(4 * h, dtype=self.dtype)
        self.bias[h:2 * h] = 1.0  # forget gate open at start of training
        self.w_in_grad = np.zeros_like(self.w_in)
        self.w_rec_grad = np.zeros_like(self.w_rec)
        self.bias_grad = np.zeros_like(self.bias)

    def param_items(self):
        return [("w_in", self.w_in), ("w_rec", self.w_rec), ("bias", self.bias)]

    def grad_items(self):
        return [("w_in", self.w_in_grad), ("w_rec", self.w_rec_grad),
                ("bias", self.bias_grad)]

    def step(self, x_t, state: LstmState) -> LstmState:
        """One gate update from the previous state (no cache, no gradients)."""
        h = self.hidden
        z = x_t @ self.w_in + state.hidden @ self.w_rec + self.bias
        i = _sigmoid(z[:, 0:h])
        f = _sigmoid(z[:, h:2 * h])
        g = np.tanh(z[:, 2 * h:3 * h])
        o = _sigmoid(z[:, 3 * h:4 * h])
        cell = f * state.cell + i * g
        hidden = o * np.tanh(cell)
        return LstmState(hidden=hidden, cell=cell)

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[2] != self.in_size:
            raise ShapeError(f"lstm expects (batch, time, {self.in_size}), got {x.shape}")
        b, t, _ = x.shape
        h = self.hidden
        hs = np.zeros((b, t, h), dtype=x.dtype)
        cache = []
        h_prev = np.zeros((b, h), dtype=x.dtype)
        c_prev = np.zeros((b, h), dtype=x.dtype)
        for ti in range(t):
            x_t = x[:, ti, :]
            z = x_t @ self.w_in + h_prev @ self.w_rec + self.bias
            i = _sigmoid(z[:, 0:h])
            f = _sigmoid(z[:, h:2 * h])
            g = np.tanh(z[:, 2 * h:3 * h])
            o = _sigmoid(z[:, 3 * h:4 * h])
            c_t = f * c_prev + i * g
            tanh_c = np.tanh(c_t)
            h_t = o * tanh_c
            hs[:, ti, :] = h_t
            cache.append((x_t, h_prev, c_prev, i, f, g, o, tanh_c))
            h_prev, c_prev = h_t, c_t
        self._cache = cache
        _check_finite("lstm", hs)
        return hs

    def backward(self, grad):
        cache = self._cache
        b, t, h = grad.shape
        dx = np.zeros((b, t, self.in_size), dtype=grad.dtype)
        dh_next = np.zeros((b, h), dtype=grad.dtype)
        dc_next = np.zeros((b, h), dtype=grad.dtype)
        for ti in range(t - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, g, o, tanh_c = cache[ti]
            dh = grad[:, ti, :] + dh_next
            do = dh * tanh_c
            dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            self.w_in_grad += x_t.T @ dz
            self.w_rec_grad += h_prev.T @ dz
            self.bias_grad += dz.sum(axis=0)
            dx[:, ti, :] = dz @ self.w_in.T
            dh_next = dz @ self.w_rec.T
        return dx

    def hyperparams(self):
        return {"in_size": self.in_size, "hidden": self.hidden}


class RNN(Layer):
    """Vanilla tanh recurrence; ``trunc_len`` limits how far gradients flow
    back through time (None = full backpropagation through time)."""

    kind = "rnn"

    def __init__(self, in_size, hidden, trunc_len=None, dtype=np.float32):
        self.in_size = in_size
        self.hidden = hidden
        self.trunc_len = trunc_len
        self.dtype = dtype
        self.w_in = np.zeros((in_size, hidden), dtype=dtype)
        self.w_rec = np.zeros((hidden, hidden), dtype=dtype)
        self.bias = np.zeros(hidden, dtype=dtype)
        self.w_in_grad = np.zeros_like(self.w_in)
        self.w_rec_grad = np.zeros_like(self.w_rec)
        self.bias_grad = np.zeros_like(self.bias)
        self._cache = None

    def init_params(self, rng):
        self.w_in = glorot_uniform(rng, self.in_size, self.hidden,
                                   (self.in_size, self.hidden), self.dtype)
        limit = 1.0 / math.sqrt(self.hidden)
        self.w_rec = rng.uniform(-limit, limit,
                                 size=(self.hidden, self.hidden)).astype(self.dtype)
        self.bias = np.zeros(self.hidden, dtype=self.dtype)
        self.w_in_grad = np.zeros_like(self.w_in)
        self.w_rec_grad = np.zeros_like(self.w_rec)
        self.bias_grad = np.zeros_like(self.bias)

    def param_items(self):
        return [("w_in", self.w_in), ("w_rec", self.w_rec), ("bias", self.bias)]

    def grad_items(self):
        return [("w_in", self.w_in_grad), ("w_rec", self.w_rec_grad),
                ("bias", self.bias_grad)]

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[2] != self.in_size:
            raise ShapeError(f"rnn expects (batch, time, {self.in_size}), got {x.shape}")
        b, t, _ = x.shape
        hs = np.zeros((b, t, self.hidden), dtype=x.dtype)
        h_prev = np.zeros((b, self.hidden), dtype=x.dtype)
        cache = []
        for ti in range(t):
            x_t = x[:, ti, :]
            h_t = np.tanh(x_t @ self.w_in + h_prev @ self.w_rec + self.bias)
            hs[:, ti, :] = h_t
            cache.append((x_t, h_prev, h_t))
            h_prev = h_t
        self._cache = cache
        return hs

    def backward(self, grad):
        cache = self._cache
        b, t, h = grad.shape
        dx = np.zeros((b, t, self.in_size), dtype=grad.dtype)
        dh_next = np.zeros((b, h), dtype=grad.dtype)
        for ti in range(t - 1, -1, -1):
            x_t, h_prev, h_t = cache[ti]
            dh = grad[:, ti, :] + dh_next
            dz = dh * (1.0 - h_t * h_t)
            self.w_in_grad += x_t.T @ dz
            self.w_rec_grad += h_prev.T @ dz
            self.bias_grad += dz.sum(axis=0)
            dx[:, ti, :] = dz @ self.w_in.T
            dh_next = dz @ self.w_rec.T
            if self.trunc_len is not None and ti % self.trunc_len == 0:
                dh_next = np.zeros_like(dh_next)  # stop gradients at chunk boundary
        return dx

    def hyperparams(self):
        return {"in_size": self.in_size, "hidden": self.hidden,
                "trunc_len": self.trunc_len}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_size, out_size, dtype=np.float32):
        self.in_size = in_size
        self.out_size = out_size
        self.dtype = dtype
        self.weight = np.zeros((in_size, out_size), dtype=dtype)
        self.bias = np.zeros(out_size, dtype=dtype)
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)
        self._cache = None

    def init_params(self, rng):
        self.weight = glorot_uniform(rng, self.in_size, self.out_size,
                                     (self.in_size, self.out_size), self.dtype)
        self.bias = np.zeros(self.out_size, dtype=self.dtype)
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grad_items(self):
        return [("weight", self.weight_grad), ("bias", self.bias_grad)]

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_size:
            raise ShapeError(f"dense expects (batch, {self.in_size}), got {x.shape}")
        self._cache = x
        return x @ self.weight + self.bias

    def backward(self, grad):
        x = self._cache
        self.weight_grad += x.T @ grad
        self.bias_grad += grad.sum(axis=0)
        return grad @ self.weight.T

    def hyperparams(self):
        return {"in_size": self.in_size, "out_size": self.out_size}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def hyperparams(self):
        return {}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False):
        shifted = x - np.max(x, axis=1, keepdims=True)
        e = np.exp(shifted)
        self._probs = e / np.sum(e, axis=1, keepdims=True)
        return self._probs

    def backward(self, grad):
        p = self._probs
        return p * (grad - np.sum(grad * p, axis=1, keepdims=True))

    def hyperparams(self):
        return {}


def softmax(logits) -> np.ndarray:
    """Row-wise stable softmax."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(probs, targets) -> float:
    """Mean categorical cross-entropy; probabilities are clamped at 1e-12."""
    probs = np.asarray(probs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    return float(-np.mean(np.sum(targets * np.log(np.maximum(probs, 1e-12)), axis=1)))


def softmax_cross_entropy_grad(probs, targets) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. the softmax input logits."""
    return (np.asarray(probs) - np.asarray(targets)) / probs.shape[0]


def lstm_step(x_t, prev: LstmState, layer: LSTM) -> LstmState:
    """Single LSTM gate update, exposed for direct inspection and tests."""
    return layer.step(np.asarray(x_t, dtype=layer.dtype), prev)
