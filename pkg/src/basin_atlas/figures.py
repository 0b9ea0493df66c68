"""Deterministic SVG figure emission for sweep reports.

All figures render through matplotlib's Agg backend with a pinned hash salt
and no date metadata, so identical inputs produce byte-identical SVG files.
Heatmap cells and histogram bars carry gid markers (cell-i-j, bar-...) that
survive into the SVG, which keeps the figures testable.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle

matplotlib.rcParams["svg.hashsalt"] = "basin-atlas"
matplotlib.rcParams["svg.fonttype"] = "none"

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}

FIGURE_KINDS = ("heatmap", "curve_panel", "histogram", "scatter_fit", "plane")

_CLUSTER_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728")


def _finish(fig, path):
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def heatmap(matrix: np.ndarray, ids, path, sort_values=None, title: str = "",
            cbar_label: str = ""):
    """Distance-matrix heatmap drawn cell by cell; optional sort key orders models."""
    matrix = np.asarray(matrix, dtype=np.float64)
    n = len(ids)
    order = np.arange(n) if sort_values is None else np.argsort(np.asarray(sort_values), kind="stable")
    m = matrix[np.ix_(order, order)]
    names = [str(ids[i]) for i in order]
    vmax = float(m.max()) if m.max() > 0 else 1.0
    cmap = plt.get_cmap("viridis")

    fig, ax = plt.subplots(figsize=(7, 6))
    for i in range(n):
        for j in range(n):
            rect = Rectangle((j, n - 1 - i), 1, 1, facecolor=cmap(m[i, j] / vmax), edgecolor="none")
            rect.set_gid(f"cell-{i}-{j}")
            ax.add_patch(rect)
    ax.set_xlim(0, n)
    ax.set_ylim(0, n)
    ax.set_xticks(np.arange(n) + 0.5)
    ax.set_xticklabels(names, rotation=90, fontsize=6)
    ax.set_yticks(np.arange(n) + 0.5)
    ax.set_yticklabels(names[::-1], fontsize=6)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(0.0, vmax))
    cb = fig.colorbar(sm, ax=ax)
    if cbar_label:
        cb.set_label(cbar_label)
    _finish(fig, path)


def curve_panel(curves, path, title: str = "", ylabel: str = "loss"):
    """Overlay of loss curves; each entry is (label, alphas, values)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, alphas, values in curves:
        ax.plot(alphas, values, marker="o", markersize=2.5, linewidth=1.0, label=str(label))
    ax.set_xlabel("interpolation coefficient")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(curves) <= 12:
        ax.legend(fontsize=6)
    _finish(fig, path)


def histogram(values, labels, path, bins: int = 20, title: str = "", xlabel: str = "accuracy"):
    """Histogram of values split by cluster label, one color per cluster."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    edges = np.histogram_bin_edges(values, bins=bins)
    fig, ax = plt.subplots(figsize=(6, 4))
    for c in sorted(set(int(x) for x in labels)):
        counts, _ = np.histogram(values[labels == c], bins=edges)
        color = _CLUSTER_COLORS[c % len(_CLUSTER_COLORS)]
        for b, cnt in enumerate(counts):
            if cnt == 0:
                continue
            rect = Rectangle((edges[b], 0), edges[b + 1] - edges[b], cnt,
                             facecolor=color, alpha=0.7, edgecolor="white", linewidth=0.4)
            rect.set_gid(f"bar-c{c}-b{b}")
            ax.add_patch(rect)
    ax.relim()
    ax.autoscale_view()
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    _finish(fig, path)


def scatter_fit(x, y, path, title: str = "", xlabel: str = "", ylabel: str = "",
                labels=None):
    """Scatter with the least-squares line and a slope annotation."""
    from .analysis import least_squares_fit

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4))
    if labels is None:
        ax.scatter(x, y, s=18)
    else:
        labels = np.asarray(labels, dtype=np.int64)
        for c in sorted(set(int(v) for v in labels)):
            mask = labels == c
            ax.scatter(x[mask], y[mask], s=18,
                       color=_CLUSTER_COLORS[c % len(_CLUSTER_COLORS)], label=f"cluster {c}")
        ax.legend(fontsize=7)
    slope, intercept, r = least_squares_fit(x, y)
    xs = np.linspace(float(x.min()), float(x.max()), 50)
    ax.plot(xs, slope * xs + intercept, color="black", linewidth=1.0)
    ax.annotate(f"slope {slope:.2f}  r {r:.2f}", xy=(0.03, 0.95),
                xycoords="axes fraction", fontsize=8, va="top")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    _finish(fig, path)


def plane_figure(xs, ys, losses, anchor_coords, path, title: str = "", levels: int = 24):
    """Filled contour plot of a planar loss surface with anchor markers."""
    fig, ax = plt.subplots(figsize=(6, 5))
    cs = ax.contourf(xs, ys, losses, levels=levels, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="loss")
    for i, (x, y) in enumerate(anchor_coords):
        ax.plot([x], [y], marker="^", color="white", markersize=7, markeredgecolor="black")
        ax.annotate(f"m{i}", xy=(x, y), xytext=(3, 3), textcoords="offset points",
                    fontsize=8, color="white")
    ax.set_xlabel("plane x (units of |p2-p1|)")
    ax.set_ylabel("plane y (units of |p2-p1|)")
    if title:
        ax.set_title(title)
    _finish(fig, path)
