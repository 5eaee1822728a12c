"""Figures written next to the CLI's logs: particle scatters and SW2 curves."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.hashsalt": "swflow",  # stable element ids, so reruns give identical files
    "svg.fonttype": "none",
}


def figure(width=4.5, height=None):
    """A figure/axes pair with the package defaults (golden-ratio height)."""
    if height is None:
        height = width * (math.sqrt(5) - 1.0) / 2.0
    with matplotlib.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path):
    with matplotlib.rc_context(_STYLE):
        fig.savefig(path, bbox_inches="tight", metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def scatter_particles(points, path, target=None, title=None, limits=None):
    """Scatter a 2-D cloud (optionally over target points) and save it to ``path``."""
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"scatter plots need 2-D points, got shape {pts.shape}")
    fig, ax = figure(4.0, 4.0)
    if target is not None:
        tgt = np.asarray(target)
        ax.scatter(tgt[:, 0], tgt[:, 1], s=1, c="0.75", linewidths=0, label="target", rasterized=False)
    ax.scatter(pts[:, 0], pts[:, 1], s=1.5, c="tab:blue", linewidths=0, label="particles")
    if limits is not None:
        ax.set_xlim(limits[0])
        ax.set_ylim(limits[1])
    ax.set_aspect("equal", adjustable="box")
    if title:
        ax.set_title(title)
    if target is not None:
        ax.legend(loc="upper right", markerscale=6, frameon=False)
    save(fig, path)


def plot_sw_curve(logs, path, labels=None):
    """Plot one or more SW2-vs-iteration curves (log scale) and save to ``path``."""
    if not isinstance(logs, (list, tuple)):
        logs = [logs]
    labels = labels or [None] * len(logs)
    fig, ax = figure()
    for lg, lab in zip(logs, labels):
        ax.plot(lg.iters, lg.sw2, lw=1.2, label=lab)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("sliced W2 to target")
    if any(labels):
        ax.legend(frameon=False)
    save(fig, path)
