"""Figure rendering for CLI reports (matplotlib, non-interactive)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed hash salt and no date stamp keep SVG output reproducible
matplotlib.rcParams["svg.hashsalt"] = "wgqed"
matplotlib.rcParams["svg.fonttype"] = "path"

_META = {"Date": None, "Creator": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata=_META if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def line_plot(path, x, curves, xlabel: str, ylabel: str, title: str | None = None, markers=False) -> Path:
    """``curves`` maps legend labels to y arrays sharing ``x``."""
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for label, y in curves.items():
        ax.plot(x, y, "o-" if markers else "-", lw=1.3, ms=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def heatmap(path, x, y, z, xlabel: str, ylabel: str, zlabel: str, title: str | None = None, cmap="viridis") -> Path:
    """``z`` has shape (len(y), len(x))."""
    fig, ax = plt.subplots(figsize=(5.6, 4.4))
    mesh = ax.pcolormesh(np.asarray(x), np.asarray(y), np.asarray(z), shading="nearest", cmap=cmap)
    mesh.set_rasterized(True)
    fig.colorbar(mesh, ax=ax, label=zlabel)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def fit_overlay(path, x, y, fits, xlabel: str, ylabel: str, title: str | None = None) -> Path:
    """Data points with one or more fitted curves ``{label: (x_fit, y_fit)}``."""
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.plot(x, y, ".", ms=2, color="0.4", label="data")
    for label, (xf, yf) in fits.items():
        ax.plot(xf, yf, "-", lw=1.5, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def contour_overlay(path, qwp, hwp, phase, cq, ch, title: str | None = None) -> Path:
    """Phase map with the equal-amplitude contour drawn on top."""
    fig, ax = plt.subplots(figsize=(5.6, 4.4))
    mesh = ax.pcolormesh(hwp, qwp, phase, shading="nearest", cmap="twilight", vmin=-np.pi, vmax=np.pi)
    mesh.set_rasterized(True)
    fig.colorbar(mesh, ax=ax, label="phase (rad)")
    ax.plot(ch, cq, "--", color="gold", lw=1.5)
    ax.set_xlabel("HWP angle (deg)")
    ax.set_ylabel("QWP angle (deg)")
    if title:
        ax.set_title(title)
    return _save(fig, path)
