"""Figures written next to the report tables.

Everything renders through the Agg backend into PNG files; no figure is
ever shown interactively.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import MODEL_ORDER, SOURCE_COLUMNS  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}
# PNG metadata would otherwise embed the matplotlib version string
_SAVE_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_SAVE_META, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_macro_f1(classifiers, path):
    """Grouped bars: one group per model, one bar per (device, source)."""
    keys = sorted({(r.device, r.source) for r in classifiers})
    models = [m for m in MODEL_ORDER if any(r.model == m for r in classifiers)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        width = 0.8 / max(len(keys), 1)
        x = np.arange(len(models))
        for j, (device, source) in enumerate(keys):
            vals = [
                next((r.report.macro_f1 for r in classifiers
                      if r.model == m and r.device == device and r.source == source), np.nan)
                for m in models
            ]
            ax.bar(x + (j - (len(keys) - 1) / 2) * width, vals, width, label=f"{device} {SOURCE_COLUMNS[source]}")
        ax.set_xticks(x, models)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("Macro-F1")
        if keys:
            ax.legend(loc="lower right")
        return _save(fig, path)


def plot_confusion(report, title, path):
    conf = report.confusion.astype(np.float64)
    rows = conf.sum(axis=1, keepdims=True)
    norm = np.divide(conf, rows, out=np.zeros_like(conf), where=rows > 0)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 5))
        im = ax.imshow(norm, cmap="Blues", vmin=0, vmax=1)
        ticks = np.arange(len(report.class_set))
        ax.set_xticks(ticks, report.class_set, rotation=90)
        ax.set_yticks(ticks, report.class_set)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        return _save(fig, path)


def plot_history(history, title, path):
    epochs = [e.epoch for e in history.epochs]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(epochs, [e.train_loss for e in history.epochs], label="train")
        ax.plot(epochs, [e.val_loss for e in history.epochs], label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_forecast(actual, predicted, title, path, rate=20.0):
    actual = np.asarray(actual)
    predicted = np.asarray(predicted)
    t = np.arange(len(actual)) / rate
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(6, 4.5), sharex=True)
        for k, ax in enumerate(axes):
            ax.plot(t, actual[:, k], lw=0.8, label="actual")
            ax.plot(t, predicted[:, k], lw=0.8, ls="--", label="forecast")
            ax.set_ylabel("xyz"[k])
        axes[0].set_title(title)
        axes[0].legend(loc="upper right", ncol=2)
        axes[-1].set_xlabel("seconds into forecast")
        return _save(fig, path)
