"""Signal-quality metrics used to compare the body sensor against the
rod-mounted sensor: energy, standard deviation, excess kurtosis, skewness,
Welch power spectral density, and spectral centroid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dynamics import SignalFrame, BODY_ACC_AXES, ROD_ACC_AXES
from .dsp import magnitude_channel
from .errors import ConfigurationError, DegenerateDataError

WELCH_SEGMENT = 256
WELCH_OVERLAP = 0.5


def signal_energy(x) -> float:
    """Sum of squared samples."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DegenerateDataError("empty signal")
    return float(np.sum(x * x))


def signal_std(x) -> float:
    """Sample standard deviation (n-1 denominator)."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise DegenerateDataError("need at least 2 samples for a standard deviation")
    return float(np.std(x, ddof=1))


def excess_kurtosis(x) -> float:
    """Fourth standardized moment minus 3 (zero for a Gaussian)."""
    x = np.asarray(x, dtype=float)
    if x.size < 4:
        raise DegenerateDataError("need at least 4 samples for kurtosis")
    centered = x - np.mean(x)
    m2 = float(np.mean(centered ** 2))
    if m2 == 0.0:
        raise DegenerateDataError("zero variance: kurtosis undefined")
    m4 = float(np.mean(centered ** 4))
    return m4 / (m2 * m2) - 3.0


def skewness(x) -> float:
    """Third standardized moment."""
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        raise DegenerateDataError("need at least 3 samples for skewness")
    centered = x - np.mean(x)
    m2 = float(np.mean(centered ** 2))
    if m2 == 0.0:
        raise DegenerateDataError("zero variance: skewness undefined")
    m3 = float(np.mean(centered ** 3))
    return m3 / m2 ** 1.5


def psd_welch(x, sample_rate_hz: float, segment_len: int = WELCH_SEGMENT,
              overlap_fraction: float = WELCH_OVERLAP):
    """One-sided Welch PSD with Hann windows and mean-detrended segments.

    Densities integrate to the signal variance (sum of density times bin
    width approximates the variance, Parseval).
    Returns (freqs_hz, density).
    """
    x = np.asarray(x, dtype=float)
    if segment_len > x.size:
        raise ConfigurationError(
            f"segment_len {segment_len} exceeds signal length {x.size}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigurationError("overlap_fraction must lie in [0, 1)")
    step = max(1, int(round(segment_len * (1.0 - overlap_fraction))))
    # periodic Hann, the spectral-estimation convention
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(segment_len) / segment_len)
    win_power = float(np.sum(window * window))
    n_bins = segment_len // 2 + 1
    acc = np.zeros(n_bins)
    count = 0
    for start in range(0, x.size - segment_len + 1, step):
        seg = x[start:start + segment_len]
        seg = (seg - np.mean(seg)) * window
        spec = np.fft.rfft(seg)
        p = (spec.real ** 2 + spec.imag ** 2) / (sample_rate_hz * win_power)
        p[1:] *= 2.0
        if segment_len % 2 == 0:
            p[-1] /= 2.0
        acc += p
        count += 1
    freqs = np.fft.rfftfreq(segment_len, d=1.0 / sample_rate_hz)
    return freqs, acc / count


def spectral_centroid(x, sample_rate_hz: float, segment_len: int | None = None) -> float:
    """Power-weighted mean frequency of the one-sided PSD, in [0, Nyquist]."""
    x = np.asarray(x, dtype=float)
    seg = segment_len if segment_len is not None else min(WELCH_SEGMENT, x.size)
    freqs, density = psd_welch(x, sample_rate_hz, segment_len=seg)
    total = float(np.sum(density))
    if total <= 0.0:
        raise DegenerateDataError("zero-power signal: spectral centroid undefined")
    return float(np.sum(freqs * density) / total)


METRIC_NAMES = ("energy", "std", "kurtosis", "skewness", "spectral_centroid_hz")


@dataclass
class ChannelQuality:
    energy: float
    std: float | None
    kurtosis: float | None
    skewness: float | None
    psd_freqs_hz: np.ndarray
    psd_density: np.ndarray
    spectral_centroid_hz: float | None
    degenerate: bool = False

    def metric(self, name: str):
        return getattr(self, "spectral_centroid_hz" if name == "spectral_centroid_hz" else name)

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "std": self.std,
            "kurtosis": self.kurtosis,
            "skewness": self.skewness,
            "spectral_centroid_hz": self.spectral_centroid_hz,
            "degenerate": self.degenerate,
            "psd_freqs_hz": [float(v) for v in self.psd_freqs_hz],
            "psd_density": [float(v) for v in self.psd_density],
        }


@dataclass
class QualityReport:
    """Per-channel quality metrics for one recording."""

    sample_rate_hz: float
    channels: dict  # name -> ChannelQuality

    def to_json(self) -> str:
        return json.dumps({
            "sample_rate_hz": self.sample_rate_hz,
            "channels": {name: cq.to_dict() for name, cq in self.channels.items()},
        }, indent=2)


def _channel_quality(x, sample_rate_hz: float) -> ChannelQuality:
    x = np.asarray(x, dtype=float)
    seg = min(WELCH_SEGMENT, x.size)
    freqs, density = psd_welch(x, sample_rate_hz, segment_len=seg)
    if float(np.max(x)) == float(np.min(x)):
        return ChannelQuality(energy=signal_energy(x), std=0.0 if x.size >= 2 else None,
                              kurtosis=None, skewness=None,
                              psd_freqs_hz=freqs, psd_density=density,
                              spectral_centroid_hz=None, degenerate=True)
    try:
        centroid = spectral_centroid(x, sample_rate_hz)
    except DegenerateDataError:
        centroid = None
    return ChannelQuality(
        energy=signal_energy(x),
        std=signal_std(x),
        kurtosis=excess_kurtosis(x),
        skewness=skewness(x),
        psd_freqs_hz=freqs,
        psd_density=density,
        spectral_centroid_hz=centroid,
        degenerate=centroid is None,
    )


def quality_report(frame: SignalFrame) -> QualityReport:
    """All six metrics for every channel, plus derived per-sensor magnitude
    channels (``body_mag``/``rod_mag``) when the standard axis triplets exist.
    Degenerate channels are flagged rather than raising.
    """
    channels = {}
    for name in frame.channels:
        channels[name] = _channel_quality(frame.channel(name), frame.sample_rate_hz)
    for mag_name, axes in (("body_mag", BODY_ACC_AXES), ("rod_mag", ROD_ACC_AXES)):
        if all(a in frame.channels for a in axes):
            channels[mag_name] = _channel_quality(
                magnitude_channel(frame, axes), frame.sample_rate_hz)
    return QualityReport(sample_rate_hz=frame.sample_rate_hz, channels=channels)


def quality_table_csv(reports_by_level: dict, channel_pairs, path) -> None:
    """CSV of metric rows by excitation-level columns.

    ``reports_by_level`` maps level -> QualityReport; ``channel_pairs`` maps a
    row suffix (e.g. "body") to the channel name whose metrics fill that row.
    """
    levels = sorted(reports_by_level)
    with open(path, "w", newline="") as fh:
        fh.write("metric," + ",".join(f"level_{lv}" for lv in levels) + "\n")
        for metric in METRIC_NAMES:
            for suffix, chan in channel_pairs.items():
                cells = []
                for lv in levels:
                    cq = reports_by_level[lv].channels[chan]
                    value = cq.metric(metric)
                    cells.append("" if value is None else repr(float(value)))
                fh.write(f"{metric}_{suffix}," + ",".join(cells) + "\n")
