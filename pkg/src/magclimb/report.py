"""Figure rendering for the report-producing commands.

Every report path writes its delimited data first; these helpers render the
matching matplotlib figures next to it.  All figures go to files (Agg
backend), never to a display.
"""

from __future__ import annotations

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .models import EvalReport, HazardLabel

_FIG_DPI = 120


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)
    return path


def rod_response_figure(omegas, gains, phases, path):
    fig, (ax_gain, ax_phase) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_gain.loglog(omegas, gains, "b-")
    ax_gain.axhline(1.0, color="gray", lw=0.8, ls="--")
    ax_gain.set_ylabel("gain")
    ax_gain.set_title("Rod base-to-tip response")
    ax_gain.grid(True, which="both", alpha=0.3)
    ax_phase.semilogx(omegas, np.degrees(phases), "r-")
    ax_phase.set_xlabel("angular frequency (rad/s)")
    ax_phase.set_ylabel("phase (deg)")
    ax_phase.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def signal_figure(frame, path, max_channels=9):
    names = list(frame.channels)[:max_channels]
    fig, axes = plt.subplots(len(names), 1, figsize=(8, 1.6 * len(names)),
                             sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        ax.plot(frame.timestamps, frame.channel(name), lw=0.5)
        ax.set_ylabel(name, fontsize=8)
        ax.grid(True, alpha=0.3)
    axes[-1, 0].set_xlabel("time (s)")
    return _save(fig, path)


def quality_psd_figure(report, path, channels=("body_mag", "rod_mag")):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name in channels:
        if name in report.channels:
            cq = report.channels[name]
            ax.semilogy(cq.psd_freqs_hz, np.maximum(cq.psd_density, 1e-18),
                        lw=0.9, label=name)
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("PSD")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def quality_trend_figure(reports_by_level, path):
    """STD and spectral centroid of both sensor magnitudes across levels."""
    levels = sorted(reports_by_level)
    fig, (ax_std, ax_cen) = plt.subplots(1, 2, figsize=(9, 4))
    for chan, style in (("body_mag", "o-"), ("rod_mag", "s--")):
        stds = [reports_by_level[lv].channels[chan].std for lv in levels]
        cens = [reports_by_level[lv].channels[chan].spectral_centroid_hz
                for lv in levels]
        ax_std.plot(levels, stds, style, label=chan)
        ax_cen.plot(levels, cens, style, label=chan)
    ax_std.set_xlabel("excitation level")
    ax_std.set_ylabel("standard deviation")
    ax_std.legend()
    ax_std.grid(True, alpha=0.3)
    ax_cen.set_xlabel("excitation level")
    ax_cen.set_ylabel("spectral centroid (Hz)")
    ax_cen.legend()
    ax_cen.grid(True, alpha=0.3)
    return _save(fig, path)


def history_figure(history, path):
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 4))
    epochs = np.arange(len(history.train_loss))
    ax_loss.plot(epochs, history.train_loss, "b-", label="train")
    ax_loss.plot(epochs, history.val_loss, "r--", label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy loss")
    ax_loss.legend()
    ax_loss.grid(True, alpha=0.3)
    ax_acc.plot(epochs, history.train_acc, "b-", label="train")
    ax_acc.plot(epochs, history.val_acc, "r--", label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend()
    ax_acc.grid(True, alpha=0.3)
    return _save(fig, path)


def confusion_figure(report: EvalReport, path, title=""):
    n = report.confusion.shape[0]
    labels = [HazardLabel(i).display for i in range(n)]
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(report.confusion, cmap="Blues")
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(int(report.confusion[i, j])), ha="center",
                    va="center", fontsize=10)
    ax.set_xticks(range(n), labels, rotation=20, fontsize=8)
    ax.set_yticks(range(n), labels, fontsize=8)
    ax.set_xlabel("predicted label")
    ax.set_ylabel("true label")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def model_comparison_figure(report, path):
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    for model in report.models():
        accs = report.accuracies(model)
        ax.plot(range(len(accs)), accs, "o-", label=model)
    ax.set_xlabel("run")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def sensor_accuracy_figure(report, path):
    rows = report.accuracy_grid()
    levels = [r["level"] for r in rows]
    width = 0.35
    x = np.arange(len(levels))
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for off, sensor in ((-width / 2, "body"), (width / 2, "rod")):
        vals = [r[sensor] if r[sensor] is not None else 0.0 for r in rows]
        ax.bar(x + off, vals, width, label=sensor)
    ax.set_xticks(x, [str(lv) for lv in levels])
    ax.set_xlabel("excitation level")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)
