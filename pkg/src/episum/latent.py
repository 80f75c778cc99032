"""Clustering of stepwise latent state vectors and transition detection."""

from __future__ import annotations

import dataclasses
import logging
import os

import numpy as np

from .embedding import check_finite, read_vectors
from .hdbscan_cluster import NOISE, HdbscanParams, hdbscan
from .umap_reduce import UmapParams, reduce

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True, eq=False)
class LatentSeries:
    episode_ref: str
    vectors: np.ndarray  # (n_steps, dim), row t is step t
    source: str = "file"

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError(f"latent series needs a non-empty 2-d array, got shape {v.shape}")
        check_finite(v)
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]


@dataclasses.dataclass(frozen=True, eq=False)
class LatentResult:
    labels: object  # ClusterLabels
    coords: np.ndarray
    transitions: tuple  # steps t with label(t) != label(t + 1)

    @property
    def unclusterable(self):
        return bool(np.all(self.labels.labels == NOISE))

    def transition_pairs(self):
        lab = self.labels.labels
        return [(t, int(lab[t]), int(lab[t + 1])) for t in self.transitions]

    def report(self):
        lab = self.labels.labels
        pct = 100.0 * np.count_nonzero(lab != NOISE) / lab.size
        head = f"steps={lab.size} clusters={self.labels.n_clusters} clustered={pct:.1f}%"
        if self.unclusterable:
            return head + "\nunclusterable: all steps are noise\n"
        lines = [head]
        for t, a, b in self.transition_pairs():
            lines.append(f"step={t} from={_name(a)} to={_name(b)}")
        return "\n".join(lines) + "\n"


def _name(label):
    return "noise" if label == NOISE else str(label)


def load_latents(path, episode_ref=None):
    """Latent vectors from an embedding-format file, one row per step."""
    x = read_vectors(path)
    if x.shape[0] == 0:
        raise ValueError(f"{os.fspath(path)}: latent file holds no vectors")
    check_finite(x)
    ref = episode_ref or os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return LatentSeries(ref, x, "file")


def synth_latents(n_segments, steps_per_segment, dim=2048, drift=0.01, seed=0):
    """Piecewise-constant trajectory: per segment an anchor plus small drift.

    Anchors are random unit directions, scaled if needed so consecutive
    anchors sit at least ``20 * drift`` apart.
    """
    rng = np.random.default_rng([seed, 11])
    anchors = _unit(rng.normal(size=(n_segments, dim)))
    if n_segments > 1:
        gap = np.linalg.norm(np.diff(anchors, axis=0), axis=1).min()
        anchors *= max(1.0, 20.0 * drift / gap)
    steps = np.repeat(np.arange(n_segments), steps_per_segment)
    noise = _unit(rng.normal(size=(steps.size, dim))) * drift
    return LatentSeries(f"synthetic-{seed}", anchors[steps] + noise, "synthetic")


def _unit(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def transitions(labels):
    """Steps ``t`` where ``labels[t] != labels[t + 1]``; noise counts as a label."""
    lab = np.asarray(getattr(labels, "labels", labels))
    return tuple(int(t) for t in np.flatnonzero(lab[:-1] != lab[1:]))


def cluster_latents(series, umap_params=UmapParams(), hdbscan_params=HdbscanParams(min_cluster_size=5)):
    n = len(series)
    nn = min(umap_params.n_neighbors, n - 1)
    if nn != umap_params.n_neighbors:
        log.warning("series of %d steps: n_neighbors %d clamped to %d", n, umap_params.n_neighbors, nn)
        umap_params = dataclasses.replace(umap_params, n_neighbors=nn)
    coords = reduce(series.vectors, umap_params)
    labels = hdbscan(coords, hdbscan_params)
    return LatentResult(labels, coords, transitions(labels))
