"""HDBSCAN density clustering on low-dimensional coordinates.

Core distances -> mutual-reachability minimum spanning tree (Prim) ->
single-linkage hierarchy -> condensed tree -> leaf or excess-of-mass
cluster selection.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.spatial.distance import cdist

NOISE = -1


@dataclasses.dataclass(frozen=True)
class HdbscanParams:
    min_cluster_size: int = 10
    min_samples: int = 1
    selection: str = "leaf"
    allow_single_cluster: bool = False

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise ValueError(f"min_cluster_size must be >= 2, got {self.min_cluster_size}")
        if self.min_samples < 1:
            raise ValueError(f"min_samples must be >= 1, got {self.min_samples}")
        if self.selection not in ("leaf", "excess_of_mass"):
            raise ValueError(f"unknown selection method {self.selection!r}")


@dataclasses.dataclass(frozen=True, eq=False)
class ClusterLabels:
    labels: np.ndarray  # cluster id >= 0 or NOISE
    members: tuple  # per cluster, an index array
    centroids: np.ndarray  # (n_clusters, n_components)
    embedding_centroids: np.ndarray | None = None

    @property
    def n_clusters(self):
        return len(self.members)

    def __len__(self):
        return self.labels.shape[0]


@dataclasses.dataclass(frozen=True)
class CondensedTree:
    """Rows ``(parent, child, lambda, size)``; cluster nodes are numbered from ``n``."""

    parent: np.ndarray
    child: np.ndarray
    lam: np.ndarray
    size: np.ndarray
    n_points: int


def core_distances(coords, min_samples):
    """Distance to the ``min_samples``-th nearest other point."""
    x = np.asarray(coords, dtype=np.float64)
    n = x.shape[0]
    if n <= min_samples:
        raise ValueError(f"need more than min_samples={min_samples} points, got {n}")
    d = cdist(x, x)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, min_samples - 1, axis=1)[:, min_samples - 1]


def mutual_reachability(coords, cores):
    d = cdist(np.asarray(coords, dtype=np.float64), np.asarray(coords, dtype=np.float64))
    return np.maximum(d, np.maximum(cores[:, None], cores[None, :]))


def mutual_reachability_mst(coords, cores):
    """Prim's algorithm from point 0; returns an ``(n - 1, 3)`` array ``(a, b, weight)``."""
    mr = mutual_reachability(coords, cores)
    n = mr.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    parent = np.full(n, -1)
    edges = np.empty((max(n - 1, 0), 3))
    current = 0
    in_tree[0] = True
    for e in range(n - 1):
        row = mr[current]
        improve = (~in_tree) & (row < best)
        best[improve] = row[improve]
        parent[improve] = current
        masked = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(masked))
        a, b = sorted((int(parent[nxt]), nxt))
        edges[e] = (a, b, best[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


def single_linkage(mst, n):
    """Union-find merge sequence; rows ``(left, right, distance, size)`` with new nodes ``n + i``."""
    order = np.lexsort((mst[:, 1], mst[:, 0], mst[:, 2]))
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    out = np.empty((n - 1, 4))
    for i, e in enumerate(order):
        a, b, w = int(mst[e, 0]), int(mst[e, 1]), mst[e, 2]
        ra, rb = find(a), find(b)
        node = n + i
        parent[ra] = parent[rb] = node
        size[node] = size[ra] + size[rb]
        out[i] = (ra, rb, w, size[node])
    return out


def condense_tree(linkage, n, min_cluster_size):
    root = 2 * n - 2
    left = {n + i: int(r[0]) for i, r in enumerate(linkage)}
    right = {n + i: int(r[1]) for i, r in enumerate(linkage)}
    dist = {n + i: r[2] for i, r in enumerate(linkage)}

    def size(node):
        return 1 if node < n else int(linkage[node - n, 3])

    def leaves(node):
        out, stack = [], [node]
        while stack:
            x = stack.pop()
            if x < n:
                out.append(x)
            else:
                stack.extend((right[x], left[x]))
        return out

    rows = []
    next_label = n + 1
    stack = [(root, n)]
    while stack:
        node, label = stack.pop()
        if node < n:
            continue
        d = dist[node]
        lam = np.inf if d <= 0 else 1.0 / d
        lc, rc = left[node], right[node]
        ls, rs = size(lc), size(rc)
        if ls >= min_cluster_size and rs >= min_cluster_size:
            for child, cs in ((lc, ls), (rc, rs)):
                rows.append((label, next_label, lam, cs))
                stack.append((child, next_label))
                next_label += 1
        elif ls < min_cluster_size and rs < min_cluster_size:
            for p in leaves(lc) + leaves(rc):
                rows.append((label, p, lam, 1))
        else:
            small, big = (lc, rc) if ls < min_cluster_size else (rc, lc)
            for p in leaves(small):
                rows.append((label, p, lam, 1))
            stack.append((big, label))
    if not rows:
        return CondensedTree(*(np.empty(0) for _ in range(4)), n_points=n)
    arr = np.array(rows, dtype=np.float64)
    return CondensedTree(
        arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2], arr[:, 3].astype(np.int64), n
    )


def _cluster_children(tree):
    kids = {}
    for p, c, s in zip(tree.parent, tree.child, tree.size):
        if s > 1 or c >= tree.n_points:
            kids.setdefault(int(p), []).append(int(c))
    return kids


def select_clusters(tree, selection="leaf", allow_single_cluster=False):
    """Ids (condensed-tree node labels) of the selected clusters."""
    n = tree.n_points
    root = n
    kids = _cluster_children(tree)
    nodes = [root] + sorted({int(c) for c in tree.child if c >= n})
    if selection == "leaf":
        leaves = [c for c in nodes if c not in kids and c != root]
        if not leaves and allow_single_cluster:
            return [root]
        return leaves
    birth = {root: 0.0}
    for p, c, lam in zip(tree.parent, tree.child, tree.lam):
        if c >= n:
            birth[int(c)] = lam
    stability = dict.fromkeys(nodes, 0.0)
    for p, c, lam, s in zip(tree.parent, tree.child, tree.lam, tree.size):
        p = int(p)
        b = birth[p]
        stability[p] += (lam - b) * s if np.isfinite(lam) or not np.isfinite(b) else np.inf
    selected = {}
    for node in sorted(nodes, reverse=True):
        children = kids.get(node, [])
        child_total = sum(stability[c] for c in children)
        if node == root and not allow_single_cluster:
            selected[node] = False
            continue
        if children and child_total > stability[node]:
            selected[node] = False
            stability[node] = child_total
        else:
            selected[node] = True
            stack = list(children)
            while stack:
                x = stack.pop()
                selected[x] = False
                stack.extend(kids.get(x, []))
    return sorted(c for c, keep in selected.items() if keep)


def labels_from_tree(tree, chosen):
    n = tree.n_points
    chosen = set(chosen)
    up = {int(c): int(p) for p, c in zip(tree.parent, tree.child) if c >= n}
    raw = np.full(n, NOISE, dtype=np.int64)
    for p, c in zip(tree.parent, tree.child):
        if c >= n:
            continue
        node = int(p)
        while node not in chosen and node in up:
            node = up[node]
        if node in chosen:
            raw[int(c)] = node
    # renumber by first appearance in point order
    mapping = {}
    labels = np.full(n, NOISE, dtype=np.int64)
    for i, r in enumerate(raw):
        if r == NOISE:
            continue
        if r not in mapping:
            mapping[r] = len(mapping)
        labels[i] = mapping[r]
    return labels


def condense_and_select(mst, n, min_cluster_size, selection="leaf", allow_single_cluster=False):
    if n < 2:
        return np.full(n, NOISE, dtype=np.int64)
    tree = condense_tree(single_linkage(mst, n), n, min_cluster_size)
    return labels_from_tree(tree, select_clusters(tree, selection, allow_single_cluster))


def make_labels(labels, coords, embeddings=None):
    labels = np.asarray(labels, dtype=np.int64)
    coords = np.asarray(coords, dtype=np.float64)
    k = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
    members = tuple(np.flatnonzero(labels == c) for c in range(k))
    centroids = np.array([coords[m].mean(axis=0) for m in members]).reshape(k, coords.shape[1])
    emb_centroids = None
    if embeddings is not None:
        vecs = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
        emb_centroids = np.array([vecs[m].mean(axis=0) for m in members]).reshape(k, vecs.shape[1])
    return ClusterLabels(labels, members, centroids, emb_centroids)


def hdbscan(coords, params=HdbscanParams(), embeddings=None):
    """Cluster ``coords``; optionally record centroids in the aligned embedding space."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    cores = core_distances(coords, params.min_samples)
    mst = mutual_reachability_mst(coords, cores)
    labels = condense_and_select(
        mst, n, params.min_cluster_size, params.selection, params.allow_single_cluster
    )
    return make_labels(labels, coords, embeddings)
