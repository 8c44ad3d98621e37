"""Matplotlib report figures rendered next to the delimited exports.

Every function writes a PNG with fixed metadata so re-rendering the
same data produces the same file. The SVG/CSV exports in evalmetrics
remain the machine-readable artifacts; these figures are the
human-readable report.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def heatmap_png(matrix: np.ndarray, path, title: str = "", extent=None) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    im = ax.imshow(
        np.asarray(matrix, dtype=np.float64),
        aspect="auto",
        origin="lower",
        cmap="plasma",
        extent=extent,
        interpolation="nearest",
    )
    ax.set_xlabel("time step")
    ax.set_ylabel("node")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return _finish(fig, path)


def profiles_png(x: np.ndarray, curves: dict, path, title: str = "", ylabel: str = "value") -> Path:
    """Spatial profiles: label -> 1D array over the grid ``x``."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, v in curves.items():
        style = "--" if "pred" in label.lower() else "-"
        ax.plot(x, np.asarray(v, dtype=np.float64), style, label=label, linewidth=1.4)
    ax.set_xlabel("x")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def error_curve_png(curve: np.ndarray, path, title: str = "", start_step: int = 0, train_end: int | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    steps = start_step + np.arange(len(curve))
    ax.plot(steps, 100.0 * np.asarray(curve, dtype=np.float64), color="#d62728", linewidth=1.4)
    if train_end is not None:
        ax.axvline(train_end, color="gray", linestyle=":", label="training end")
        ax.legend()
    ax.set_xlabel("time step")
    ax.set_ylabel("relative L2 error [%]")
    ax.set_title(title)
    fig.tight_layout()
    return _finish(fig, path)


def band_png(
    x: np.ndarray,
    mean: np.ndarray,
    std: np.ndarray,
    path,
    truth: np.ndarray | None = None,
    title: str = "",
    n_std: float = 2.0,
) -> Path:
    """Prediction with a +-n_std band, optionally against the truth."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    ax.fill_between(
        x, mean - n_std * std, mean + n_std * std,
        alpha=0.3, color="#1f77b4", label=f"±{n_std:g}σ",
    )
    ax.plot(x, mean, color="#1f77b4", linewidth=1.4, label="ensemble mean")
    if truth is not None:
        ax.plot(x, np.asarray(truth, dtype=np.float64), "k--", linewidth=1.0, label="truth")
    ax.set_xlabel("x")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def loss_curves_png(history: dict, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(history["train_loss"], label="train", linewidth=1.2)
    ax.semilogy(history["val_loss"], label="validation", linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)
