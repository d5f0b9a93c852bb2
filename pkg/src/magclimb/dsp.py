"""Signal preprocessing: low-pass filtering, normalization, magnitude channel,
and fixed-length windowing.

The low-pass is a Butterworth design realized as a cascade of causal biquads
(analog prototype + bilinear transform with cutoff pre-warping), so the DC
gain is exactly one and the -3 dB point lands on the requested cutoff.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SignalFrame
from .errors import ConfigurationError, DegenerateDataError

DEFAULT_FILTER_ORDER = 4
DEFAULT_CUTOFF_HZ = 10.0
DEFAULT_WINDOW_LEN = 128
DEFAULT_WINDOW_STRIDE = 64


@dataclass(frozen=True)
class FilterSpec:
    order: int
    cutoff_hz: float
    sample_rate_hz: float

    def __post_init__(self):
        if self.order < 1:
            raise ConfigurationError("filter order must be >= 1")
        if not 0.0 < self.cutoff_hz < self.sample_rate_hz / 2.0:
            raise ConfigurationError(
                f"cutoff {self.cutoff_hz:g} Hz must lie strictly below the "
                f"Nyquist frequency {self.sample_rate_hz / 2.0:g} Hz")


@dataclass(frozen=True)
class FilterCoeffs:
    """Cascade of direct-form second-order sections (b0, b1, b2, a1, a2)."""

    sections: tuple

    def to_json(self) -> str:
        return json.dumps({"sections": [list(s) for s in self.sections]}, indent=2)

    @staticmethod
    def from_json(text: str) -> "FilterCoeffs":
        raw = json.loads(text)
        return FilterCoeffs(sections=tuple(tuple(s) for s in raw["sections"]))


@dataclass
class NormParams:
    """Fitted normalization state, reusable on held-out data."""

    mode: str                     # "minmax" | "zscore"
    x_min: float = 0.0
    x_max: float = 0.0
    mean: float = 0.0
    std: float = 1.0
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"mode": self.mode, "x_min": self.x_min, "x_max": self.x_max,
                "mean": self.mean, "std": self.std, "degenerate": self.degenerate}


def design_butterworth(spec: FilterSpec) -> FilterCoeffs:
    """Discrete low-pass from the analog prototype via the bilinear transform.

    Pre-warping puts the half-power point exactly at ``cutoff_hz``; each
    conjugate pole pair becomes one biquad, an odd order adds a first-order
    section expressed as a biquad with zero trailing coefficients.
    """
    n = spec.order
    warp = math.tan(math.pi * spec.cutoff_hz / spec.sample_rate_hz)
    w2 = warp * warp
    sections = []
    for k in range(n // 2):
        # analog pole pair: s^2 + 2 sin(theta) s + 1 with theta over the Butterworth circle
        r = math.sin(math.pi * (2 * k + 1) / (2 * n))
        norm = w2 + 2.0 * warp * r + 1.0
        b0 = w2 / norm
        sections.append((b0, 2.0 * b0, b0,
                         2.0 * (w2 - 1.0) / norm,
                         (w2 - 2.0 * warp * r + 1.0) / norm))
    if n % 2:
        norm = warp + 1.0
        b0 = warp / norm
        sections.append((b0, b0, 0.0, (warp - 1.0) / norm, 0.0))
    return FilterCoeffs(sections=tuple(sections))


def filter_response(coeffs: FilterCoeffs, freq_hz, sample_rate_hz: float) -> np.ndarray:
    """Complex frequency response of the cascade at the given frequencies."""
    w = 2.0 * math.pi * np.asarray(freq_hz, dtype=float) / sample_rate_hz
    z1 = np.exp(-1j * w)
    z2 = z1 * z1
    h = np.ones_like(z1)
    for b0, b1, b2, a1, a2 in coeffs.sections:
        h = h * (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
    return h


def filter_signal(coeffs: FilterCoeffs, x) -> np.ndarray:
    """Causal cascaded-biquad filtering from zero initial state (same length)."""
    y = np.asarray(x, dtype=float).copy()
    for b0, b1, b2, a1, a2 in coeffs.sections:
        out = np.empty_like(y)
        # direct form II transposed state
        s1 = 0.0
        s2 = 0.0
        for i, v in enumerate(y):
            w = b0 * v + s1
            s1 = b1 * v - a1 * w + s2
            s2 = b2 * v - a2 * w
            out[i] = w
        y = out
    return y


def minmax_normalize(x, params: NormParams | None = None):
    """Scale to [0, 1]; a constant input yields zeros plus a degenerate flag."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DegenerateDataError("cannot normalize an empty sequence")
    if params is None:
        lo, hi = float(np.min(x)), float(np.max(x))
        params = NormParams(mode="minmax", x_min=lo, x_max=hi, degenerate=(hi == lo))
    if params.degenerate or params.x_max == params.x_min:
        return np.zeros_like(x), params
    return (x - params.x_min) / (params.x_max - params.x_min), params


def zscore_normalize(x, params: NormParams | None = None):
    """Center/scale by mean and population std; refit when no params are given."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DegenerateDataError("cannot normalize an empty sequence")
    if params is None:
        mu = float(np.mean(x))
        sigma = float(np.std(x))
        params = NormParams(mode="zscore", mean=mu, std=sigma, degenerate=(sigma == 0.0))
    if params.degenerate or params.std == 0.0:
        return np.zeros_like(x), params
    return (x - params.mean) / params.std, params


def magnitude_channel(frame: SignalFrame, axes) -> np.ndarray:
    """Per-sample Euclidean norm over the named axes.

    Independent of sensor mounting orientation: any global rotation of the
    axes leaves the output unchanged.
    """
    stacked = np.stack([frame.channel(name) for name in axes], axis=0)
    return np.sqrt(np.sum(stacked * stacked, axis=0))


def window_segments(x, length: int, stride: int) -> list:
    """Fixed-length windows at offsets 0, stride, 2*stride, ...; partial tail dropped."""
    if length < 1 or stride < 1:
        raise ConfigurationError("window length and stride must be >= 1")
    x = np.asarray(x)
    if length > len(x):
        return []
    count = (len(x) - length) // stride + 1
    return [x[i * stride:i * stride + length].copy() for i in range(count)]


@dataclass(frozen=True)
class PreprocessSpec:
    """One place for the full filter -> magnitude -> normalize -> window chain."""

    filter_order: int = DEFAULT_FILTER_ORDER
    cutoff_hz: float = DEFAULT_CUTOFF_HZ
    window_len: int = DEFAULT_WINDOW_LEN
    stride: int = DEFAULT_WINDOW_STRIDE
    normalization: str = "minmax"         # "minmax" | "zscore"
    axes: tuple = ()                      # empty = caller supplies explicitly

    def to_dict(self) -> dict:
        return {"filter_order": self.filter_order, "cutoff_hz": self.cutoff_hz,
                "window_len": self.window_len, "stride": self.stride,
                "normalization": self.normalization, "axes": list(self.axes)}


def preprocess_frame(frame: SignalFrame, spec: PreprocessSpec, axes=None,
                     params: NormParams | None = None):
    """Filter each axis, collapse to the magnitude channel, normalize, window.

    Returns (windows, params).  When ``params`` is given it is reused (fit on
    training data, apply on held-out data); min-max application clips to [0, 1]
    so out-of-range held-out samples stay inside the contract.
    """
    axes = tuple(axes if axes is not None else spec.axes)
    if not axes:
        raise ConfigurationError("no axes selected for preprocessing")
    coeffs = design_butterworth(FilterSpec(spec.filter_order, spec.cutoff_hz,
                                           frame.sample_rate_hz))
    filtered = SignalFrame(
        sample_rate_hz=frame.sample_rate_hz,
        timestamps=frame.timestamps,
        channels={name: filter_signal(coeffs, frame.channel(name)) for name in axes})
    mag = magnitude_channel(filtered, axes)
    if spec.normalization == "minmax":
        normed, params = minmax_normalize(mag, params)
        if params is not None and not params.degenerate:
            normed = np.clip(normed, 0.0, 1.0)
    elif spec.normalization == "zscore":
        normed, params = zscore_normalize(mag, params)
    else:
        raise ConfigurationError(f"unknown normalization {spec.normalization!r}")
    return window_segments(normed, spec.window_len, spec.stride), params


def windows_to_csv(windows, path) -> None:
    with open(path, "w", newline="") as fh:
        n = len(windows[0]) if windows else 0
        fh.write("window_id," + ",".join(f"s{i}" for i in range(n)) + "\n")
        for wid, w in enumerate(windows):
            fh.write(str(wid) + "," + ",".join(repr(float(v)) for v in w) + "\n")
