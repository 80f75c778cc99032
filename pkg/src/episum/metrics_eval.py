"""Cluster quality metrics and the two-parameter sweep harness."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math

import numpy as np
from scipy.spatial.distance import cdist

from .embedding import embed_builtin
from .hdbscan_cluster import NOISE, HdbscanParams, hdbscan
from .umap_reduce import UmapParams, pairwise_distances, reduce

log = logging.getLogger(__name__)

DEFAULT_NEIGHBORS = (10, 15, 20, 25, 30)
DEFAULT_MCS = (5, 10, 15, 20, 25)
SWEEP_COLUMNS = ("n_neighbors", "min_cluster", "clustered_pct", "sil_score", "global_cos_sim", "mean")


class MetricUndefinedError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class EvalReport:
    clustered_pct: float
    sil_score: float  # NaN when fewer than two clusters
    global_cos_sim: float  # NaN when there are no clusters
    n_clusters: int

    @property
    def mean(self):
        return (self.sil_score + self.global_cos_sim) / 2.0

    def as_dict(self):
        d = dataclasses.asdict(self)
        d["mean"] = self.mean
        return d


def _labels(labels):
    return np.asarray(getattr(labels, "labels", labels), dtype=np.int64)


def silhouette(coords, labels):
    """Mean silhouette over non-noise points, Euclidean in ``coords``.

    Points alone in their cluster score 0.
    """
    lab = _labels(labels)
    keep = lab != NOISE
    x = np.asarray(coords, dtype=np.float64)[keep]
    lab = lab[keep]
    ids, inv = np.unique(lab, return_inverse=True)
    if ids.size < 2:
        raise MetricUndefinedError(f"silhouette undefined with {ids.size} cluster(s)")
    d = cdist(x, x)
    onehot = np.zeros((lab.size, ids.size))
    onehot[np.arange(lab.size), inv] = 1.0
    sums = d @ onehot
    counts = onehot.sum(axis=0)
    own = counts[inv]
    rows = np.arange(lab.size)
    a = np.divide(sums[rows, inv], own - 1, out=np.zeros(lab.size), where=own > 1)
    other = sums / counts
    other[rows, inv] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.divide(b - a, denom, out=np.zeros(lab.size), where=denom > 0)
    s[own == 1] = 0.0
    return float(s.mean())


def global_cos_sim(embeddings, labels):
    """Mean over clusters of the mean member-to-centroid cosine similarity."""
    lab = _labels(labels)
    vecs = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
    ids = [c for c in np.unique(lab) if c != NOISE]
    if not ids:
        raise MetricUndefinedError("global cosine similarity undefined without clusters")
    per_cluster = []
    for c in ids:
        members = vecs[lab == c]
        centroid = members.mean(axis=0)
        cn = np.linalg.norm(centroid)
        if cn == 0:
            raise MetricUndefinedError(f"cluster {c} has a zero centroid")
        sims = members @ centroid / (np.linalg.norm(members, axis=1) * cn)
        per_cluster.append(sims.mean())
    return float(np.mean(per_cluster))


def clustered_fraction(labels):
    lab = _labels(labels)
    if lab.size == 0:
        return 0.0
    return 100.0 * float(np.count_nonzero(lab != NOISE)) / lab.size


def trustworthiness(x_high, coords, k, metric="euclidean"):
    """Rank-based neighbourhood preservation in ``[0, 1]`` (1 is perfect)."""
    n = np.asarray(coords).shape[0]
    if k >= n / 2:
        raise ValueError(f"trustworthiness needs k < n/2, got k={k}, n={n}")
    dh = pairwise_distances(x_high, metric)
    np.fill_diagonal(dh, np.inf)
    order = np.argsort(dh, axis=1, kind="stable")
    ranks = np.empty_like(order)
    ranks[np.arange(n)[:, None], order] = np.arange(1, n + 1)[None, :]
    dl = cdist(coords, coords)
    np.fill_diagonal(dl, np.inf)
    nbrs = np.argsort(dl, axis=1, kind="stable")[:, :k]
    penalty = np.take_along_axis(ranks, nbrs, axis=1) - k
    total = penalty[penalty > 0].sum()
    return 1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * total


def evaluate(embeddings, coords, labels):
    lab = _labels(labels)
    n_clusters = len({int(c) for c in lab if c != NOISE})
    try:
        sil = silhouette(coords, lab)
    except MetricUndefinedError:
        sil = math.nan
    try:
        gcs = global_cos_sim(embeddings, lab)
    except MetricUndefinedError:
        gcs = math.nan
    return EvalReport(clustered_fraction(lab), sil, gcs, n_clusters)


@dataclasses.dataclass(frozen=True)
class SweepRow:
    n_neighbors: int
    min_cluster_size: int
    report: EvalReport
    n_episodes: int
    n_excluded: int  # episodes whose silhouette was undefined

    def cells(self):
        r = self.report
        return (
            str(self.n_neighbors),
            str(self.min_cluster_size),
            _fmt(r.clustered_pct),
            _fmt(r.sil_score),
            _fmt(r.global_cos_sim),
            _fmt(r.mean),
        )


def _fmt(v):
    return "nan" if v is None or math.isnan(v) else f"{v:.6f}"


@dataclasses.dataclass(frozen=True)
class SweepTable:
    rows: tuple

    def to_csv(self):
        lines = [",".join(SWEEP_COLUMNS)] + [",".join(r.cells()) for r in self.rows]
        return "\n".join(lines) + "\n"

    def best(self):
        scored = [r for r in self.rows if not math.isnan(r.report.mean)]
        if not scored:
            return None
        return max(scored, key=lambda r: (r.report.mean, -r.n_neighbors, -r.min_cluster_size))


def average_reports(reports):
    """Average per-episode reports; silhouette skips episodes where it is undefined."""
    pct = float(np.mean([r.clustered_pct for r in reports]))
    sils = [r.sil_score for r in reports if not math.isnan(r.sil_score)]
    gcss = [r.global_cos_sim for r in reports if not math.isnan(r.global_cos_sim)]
    excluded = len(reports) - len(sils)
    rep = EvalReport(
        pct,
        float(np.mean(sils)) if sils else math.nan,
        float(np.mean(gcss)) if gcss else math.nan,
        int(round(np.mean([r.n_clusters for r in reports]))),
    )
    return rep, excluded


def _episode_grid(corpus, grid_neighbors, grid_mcs, umap_base, hdb_base, embed_dim):
    emb = embed_builtin(corpus, dim=embed_dim) if not hasattr(corpus, "vectors") else corpus
    n = len(emb)
    out = {}
    for nn in grid_neighbors:
        eff = min(nn, n - 1)
        if eff != nn:
            log.warning("episode with %d items: n_neighbors %d clamped to %d", n, nn, eff)
        coords = reduce(emb, dataclasses.replace(umap_base, n_neighbors=eff))
        for mcs in grid_mcs:
            labels = hdbscan(coords, dataclasses.replace(hdb_base, min_cluster_size=mcs), emb)
            out[nn, mcs] = evaluate(emb, coords, labels)
    return out


def sweep(
    corpora,
    grid_neighbors=DEFAULT_NEIGHBORS,
    grid_mcs=DEFAULT_MCS,
    umap_params=UmapParams(),
    hdbscan_params=HdbscanParams(),
    embed_dim=384,
    threads=1,
):
    """Run reduce -> cluster -> evaluate for every grid cell and average over episodes.

    ``corpora`` holds tag corpora (embedded with the built-in embedder) or
    ready :class:`EmbeddingMatrix` objects.
    """
    corpora = list(corpora)
    if not corpora:
        raise ValueError("sweep needs at least one episode")

    def work(c):
        return _episode_grid(c, grid_neighbors, grid_mcs, umap_params, hdbscan_params, embed_dim)

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            per_episode = list(pool.map(work, corpora))
    else:
        per_episode = [work(c) for c in corpora]
    rows = []
    for nn in sorted(grid_neighbors):
        for mcs in sorted(grid_mcs):
            rep, excluded = average_reports([ep[nn, mcs] for ep in per_episode])
            if excluded:
                log.info(
                    "n_neighbors=%d min_cluster_size=%d: %d of %d episodes excluded from sil_score",
                    nn, mcs, excluded, len(per_episode),
                )
            rows.append(SweepRow(nn, mcs, rep, len(per_episode), excluded))
    return SweepTable(tuple(rows))
