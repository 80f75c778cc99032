"""Deterministic SVG figures: cluster scatter, latent trajectories, sweep heatmap.

Figures are drawn directly on an SVG canvas with a fixed hash salt and no
date metadata so identical inputs give identical bytes.
"""

from __future__ import annotations

import functools
import io
import threading

import matplotlib
import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .hdbscan_cluster import NOISE

NOISE_COLOR = "#b0b0b0"
_RC = {"svg.hashsalt": "episum", "svg.fonttype": "none", "font.size": 8.0}
# rc params are process-global; renders from worker threads must not interleave
_LOCK = threading.RLock()


def _serialized(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with _LOCK, matplotlib.rc_context(_RC):
            return fn(*args, **kwargs)

    return wrapper


def _palette(k):
    cmap = matplotlib.colormaps["tab20" if k > 10 else "tab10"]
    return [matplotlib.colors.to_hex(cmap(i % cmap.N)) for i in range(k)]


def _to_svg(fig):
    buf = io.StringIO()
    with matplotlib.rc_context(_RC):
        FigureCanvasSVG(fig).print_svg(buf, metadata={"Date": None})
    return buf.getvalue()


def _new_figure(size=(7.0, 5.0)):
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=size)
        ax = fig.add_subplot()
    return fig, ax


def _scatter_clusters(ax, coords, labels):
    lab = np.asarray(getattr(labels, "labels", labels))
    ids = sorted({int(c) for c in lab if c != NOISE})
    colors = _palette(len(ids))
    noise = lab == NOISE
    if noise.any():
        ax.scatter(coords[noise, 0], coords[noise, 1], s=9, c=NOISE_COLOR, linewidths=0, gid="noise")
    span = np.ptp(coords[:, 1]) if coords.shape[0] > 1 else 1.0
    for k, color in zip(ids, colors):
        pts = coords[lab == k]
        ax.scatter(pts[:, 0], pts[:, 1], s=9, c=color, linewidths=0, gid=f"cluster-{k}")
        cx, cy = pts.mean(axis=0)
        ax.plot([cx], [cy], marker="x", color="black", markersize=7, linestyle="none", gid=f"centroid-{k}")
        top = pts[:, 1].max() + 0.04 * (span or 1.0)
        ax.text(cx, top, str(k), ha="center", va="bottom", gid=f"label-{k}")
    return ids


@_serialized
def render_scatter(coords, labels, summary=None, n_tags=None, title=None):
    """SVG scatter of 2-d coordinates coloured by cluster.

    Noise points are gray, each cluster centroid carries an ``x`` and its id
    is written just above the cluster.  ``summary`` (a :class:`Summary` or
    plain text) is shown in an inset block beside the plot.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[0] == 0:
        raise ValueError("render_scatter needs at least one 2-d point")
    if coords.shape[1] != 2:
        raise ValueError(f"render_scatter needs 2-d coordinates, got {coords.shape[1]}-d")
    n_tags = coords.shape[0] if n_tags is None else n_tags
    fig, ax = _new_figure((10.0, 5.5) if summary is not None else (7.0, 5.0))
    with matplotlib.rc_context(_RC):
        _scatter_clusters(ax, coords, labels)
        ax.plot([], [], marker="o", linestyle="none", color=NOISE_COLOR, label=f"{n_tags} tags")
        ax.legend(loc="lower right", frameon=True)
        if title:
            ax.set_title(title)
        if summary is not None:
            text = summary if isinstance(summary, str) else summary.render()
            fig.subplots_adjust(right=0.55)
            fig.text(0.57, 0.95, text.rstrip("\n"), va="top", ha="left", family="monospace",
                     fontsize=6.0, gid="summary")
    return _to_svg(fig)


@_serialized
def render_latents(coords, labels, title=None):
    """Latent scatter with each point annotated by its step index."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[0] == 0:
        raise ValueError("render_latents needs at least one 2-d point")
    fig, ax = _new_figure()
    with matplotlib.rc_context(_RC):
        _scatter_clusters(ax, coords, labels)
        ax.plot(coords[:, 0], coords[:, 1], color="#dddddd", linewidth=0.6, zorder=0)
        for t, (x, y) in enumerate(coords):
            ax.annotate(str(t), (x, y), xytext=(3, 3), textcoords="offset points", fontsize=6.0,
                        gid=f"step-{t}")
        ax.set_title(title or f"{coords.shape[0]} steps")
    return _to_svg(fig)


@_serialized
def render_sweep(table):
    """Heatmap of the sweep's mean score over (n_neighbors, min_cluster_size)."""
    nns = sorted({r.n_neighbors for r in table.rows})
    mcss = sorted({r.min_cluster_size for r in table.rows})
    grid = np.full((len(nns), len(mcss)), np.nan)
    for r in table.rows:
        grid[nns.index(r.n_neighbors), mcss.index(r.min_cluster_size)] = r.report.mean
    fig, ax = _new_figure((5.5, 4.5))
    with matplotlib.rc_context(_RC):
        im = ax.imshow(grid, cmap="viridis", origin="lower", aspect="auto")
        ax.set_xticks(range(len(mcss)), [str(m) for m in mcss])
        ax.set_yticks(range(len(nns)), [str(n) for n in nns])
        ax.set_xlabel("min_cluster_size")
        ax.set_ylabel("n_neighbors")
        for i in range(len(nns)):
            for j in range(len(mcss)):
                v = grid[i, j]
                ax.text(j, i, "nan" if np.isnan(v) else f"{v:.3f}", ha="center", va="center",
                        fontsize=6.0, color="white")
        fig.colorbar(im, ax=ax, label="mean")
    return _to_svg(fig)
