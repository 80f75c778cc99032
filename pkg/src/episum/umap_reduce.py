"""UMAP dimensionality reduction with exact nearest neighbours.

Pipeline: exact kNN -> smoothed kNN weights -> fuzzy union -> low-dimensional
kernel fit -> spectral initialisation -> edge-sampled SGD layout.  Every step
is deterministic for a fixed seed.
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numba
import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.optimize import curve_fit
from scipy.spatial.distance import cdist
from threadpoolctl import threadpool_limits

from ._rng import make_state, xorshift
from .errors import ConvergenceError

log = logging.getLogger(__name__)

SMOOTH_ITERATIONS = 64
SIGMA_BRACKET = (1e-8, 1e4)
DENSE_EIGEN_LIMIT = 4000


@dataclasses.dataclass(frozen=True)
class UmapParams:
    n_neighbors: int = 10
    min_dist: float = 0.0
    n_components: int = 2
    metric: str = "cosine"
    n_epochs: int = 500
    seed: int = 0
    negative_sample_rate: int = 5
    spread: float = 1.0
    learning_rate: float = 1.0
    repulsion_strength: float = 1.0
    unique: bool = True

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise ValueError(f"n_neighbors must be >= 2, got {self.n_neighbors}")
        if self.n_components < 1:
            raise ValueError(f"n_components must be >= 1, got {self.n_components}")
        if self.min_dist < 0:
            raise ValueError(f"min_dist must be >= 0, got {self.min_dist}")
        if self.n_epochs < 1:
            raise ValueError(f"n_epochs must be >= 1, got {self.n_epochs}")
        if self.metric not in ("cosine", "euclidean"):
            raise ValueError(f"unsupported metric {self.metric!r}")
        if self.negative_sample_rate < 0:
            raise ValueError("negative_sample_rate must be >= 0")


@dataclasses.dataclass(frozen=True, eq=False)
class FuzzyGraph:
    n: int
    matrix: scipy.sparse.csr_matrix  # weights in (0, 1]
    rho: np.ndarray
    sigma: np.ndarray

    def dense(self):
        return self.matrix.toarray()


def _as_array(x):
    return np.asarray(getattr(x, "vectors", x), dtype=np.float64)


def pairwise_distances(x, metric="cosine"):
    x = _as_array(x)
    d = cdist(x, x, metric=metric)
    np.maximum(d, 0.0, out=d)
    return d


def knn(x, k, metric="cosine"):
    """Exact k nearest neighbours (self excluded, ties to the lower index).

    Returns ``(indices, distances)``, each of shape ``(n, k)``.
    """
    x = _as_array(x)
    n = x.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} points for kNN, got {n}")
    d = pairwise_distances(x, metric)
    np.fill_diagonal(d, np.inf)
    idx = np.argsort(d, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(d, idx, axis=1)


def smooth_weights(indices, distances, k=None):
    """Directed membership strengths from the smoothed-kNN calibration.

    Per point, ``rho`` is the nearest-neighbour distance and ``sigma`` is
    found by bisection so that ``sum_j exp(-max(0, d_ij - rho) / sigma)``
    equals ``log2(k)``.
    """
    indices = np.asarray(indices)
    distances = np.asarray(distances, dtype=np.float64)
    n, kk = distances.shape
    k = kk if k is None else k
    target = math.log2(k)
    rho = distances[:, 0].copy()
    shifted = np.maximum(distances - rho[:, None], 0.0)
    lo = np.full(n, SIGMA_BRACKET[0])
    hi = np.full(n, SIGMA_BRACKET[1])
    for _ in range(SMOOTH_ITERATIONS):
        mid = 0.5 * (lo + hi)
        total = np.exp(-shifted / mid[:, None]).sum(axis=1)
        over = total > target
        hi = np.where(over, mid, hi)
        lo = np.where(over, lo, mid)
    sigma = 0.5 * (lo + hi)
    weights = np.exp(-shifted / sigma[:, None])
    rows = np.repeat(np.arange(n), kk)
    mat = scipy.sparse.csr_matrix((weights.ravel(), (rows, indices.ravel())), shape=(n, n))
    mat.eliminate_zeros()
    return FuzzyGraph(n, mat, rho, sigma)


def fuzzy_union(a, b):
    """Probabilistic t-conorm ``a + b - a*b``."""
    return a + b - a * b


def symmetrize(graph):
    w = graph.matrix
    wt = w.T.tocsr()
    sym = (w + wt - w.multiply(wt)).tocsr()
    sym.eliminate_zeros()
    sym.sort_indices()
    return FuzzyGraph(graph.n, sym, graph.rho, graph.sigma)


def _kernel(d, a, b):
    return 1.0 / (1.0 + a * d ** (2 * b))


def curve_target(d, min_dist, spread=1.0):
    return np.where(d <= min_dist, 1.0, np.exp(-(d - min_dist) / spread))


def fit_curve(min_dist, spread=1.0):
    """Least-squares ``(a, b)`` for the kernel ``1 / (1 + a d^(2b))``."""
    d = np.linspace(0, 3 * spread, 300)
    y = curve_target(d, min_dist, spread)
    try:
        (a, b), _ = curve_fit(_kernel, d, y, p0=(1.0, 1.0), maxfev=10000)
    except RuntimeError as exc:
        raise ConvergenceError(f"kernel fit did not converge: {exc}") from None
    rmse = float(np.sqrt(np.mean((_kernel(d, a, b) - y) ** 2)))
    if not (np.isfinite(a) and np.isfinite(b) and a > 0 and b > 0):
        raise ConvergenceError(f"kernel fit produced invalid parameters a={a}, b={b} (rmse {rmse:.4g})")
    return float(a), float(b)


def spectral_layout(graph, n_components, seed):
    """Eigenvectors of the normalised Laplacian; ``None`` when the solve fails."""
    n = graph.n
    if n <= n_components + 1:
        return None
    w = graph.matrix
    deg = np.asarray(w.sum(axis=1)).ravel()
    inv_sqrt = np.zeros(n)
    inv_sqrt[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    dinv = scipy.sparse.diags(inv_sqrt)
    lap = scipy.sparse.identity(n) - dinv @ w @ dinv
    try:
        with threadpool_limits(limits=1):
            if n <= DENSE_EIGEN_LIMIT:
                _, vecs = np.linalg.eigh(lap.toarray())
                coords = vecs[:, 1 : n_components + 1]
            else:
                v0 = np.random.default_rng(seed).uniform(size=n)
                vals, vecs = scipy.sparse.linalg.eigsh(
                    lap, k=n_components + 1, which="SM", v0=v0, tol=1e-4, maxiter=n * 5
                )
                order = np.argsort(vals)[1 : n_components + 1]
                coords = vecs[:, order]
    except (np.linalg.LinAlgError, scipy.sparse.linalg.ArpackError):
        return None
    if not np.all(np.isfinite(coords)) or np.abs(coords).max() == 0:
        return None
    return coords


def initialize(graph, n_components, seed):
    rng = np.random.default_rng(seed)
    coords = spectral_layout(graph, n_components, seed)
    if coords is None:
        return rng.uniform(-10.0, 10.0, size=(graph.n, n_components))
    coords = coords * (10.0 / np.abs(coords).max())
    coords = coords + rng.normal(scale=1e-4, size=coords.shape)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return 10.0 * (coords - lo) / span


def epochs_per_sample(weights, n_epochs):
    n_samples = n_epochs * (weights / weights.max())
    out = np.full(weights.shape[0], -1.0)
    out[n_samples > 0] = float(n_epochs) / n_samples[n_samples > 0]
    return out


@numba.njit(cache=True)
def _clip(v):
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


@numba.njit(nogil=True, cache=True)
def _sgd(emb, head, tail, eps, n_epochs, a, b, gamma, neg_rate, lr0, state):
    n_vertices, dim = emb.shape
    n_edges = head.shape[0]
    next_sample = eps.copy()
    if neg_rate > 0:
        eps_neg = eps / neg_rate
    else:
        eps_neg = eps.copy()
    next_neg = eps_neg.copy()
    for epoch in range(n_epochs):
        alpha = lr0 * (1.0 - epoch / n_epochs)
        for i in range(n_edges):
            if next_sample[i] > epoch:
                continue
            j = head[i]
            k = tail[i]
            d2 = 0.0
            for c in range(dim):
                diff = emb[j, c] - emb[k, c]
                d2 += diff * diff
            coeff = 0.0
            if d2 > 0.0:
                coeff = -2.0 * a * b * d2 ** (b - 1.0) / (a * d2**b + 1.0)
            for c in range(dim):
                g = _clip(coeff * (emb[j, c] - emb[k, c])) * alpha
                emb[j, c] += g
                emb[k, c] -= g
            next_sample[i] += eps[i]
            if neg_rate <= 0:
                continue
            n_neg = int((epoch - next_neg[i]) / eps_neg[i])
            for _ in range(n_neg):
                k = int(xorshift(state) % np.uint64(n_vertices))
                if k == j:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = emb[j, c] - emb[k, c]
                    d2 += diff * diff
                if d2 > 0.0:
                    coeff = 2.0 * gamma * b / ((0.001 + d2) * (a * d2**b + 1.0))
                    for c in range(dim):
                        emb[j, c] += _clip(coeff * (emb[j, c] - emb[k, c])) * alpha
                else:
                    for c in range(dim):
                        emb[j, c] += 4.0 * alpha
            next_neg[i] += n_neg * eps_neg[i]
        for r in range(n_vertices):
            for c in range(dim):
                if not np.isfinite(emb[r, c]):
                    return epoch
    return -1


def optimize_layout(graph, params, a=None, b=None, init=None):
    """Stochastic layout of ``graph`` into ``params.n_components`` dimensions."""
    if graph.n == 0 or graph.matrix.nnz == 0:
        raise ValueError("cannot lay out an empty graph")
    if a is None or b is None:
        a, b = fit_curve(params.min_dist, params.spread)
    coo = graph.matrix.tocoo()
    weights = coo.data.astype(np.float64)
    keep = weights >= weights.max() / float(params.n_epochs)
    head = coo.row[keep].astype(np.int64)
    tail = coo.col[keep].astype(np.int64)
    eps = epochs_per_sample(weights[keep], params.n_epochs)
    emb = initialize(graph, params.n_components, params.seed) if init is None else np.array(init, dtype=np.float64)
    state = make_state(params.seed, 1)
    bad_epoch = _sgd(
        emb,
        head,
        tail,
        eps,
        int(params.n_epochs),
        float(a),
        float(b),
        float(params.repulsion_strength),
        int(params.negative_sample_rate),
        float(params.learning_rate),
        state,
    )
    if bad_epoch >= 0:
        raise ConvergenceError(f"layout produced non-finite coordinates at epoch {bad_epoch}")
    return emb


def fuzzy_graph(x, params):
    idx, dist = knn(x, params.n_neighbors, params.metric)
    return symmetrize(smooth_weights(idx, dist, params.n_neighbors))


def unique_rows(x):
    """Distinct rows of ``x`` in first-appearance order and the inverse map."""
    _, first, inverse = np.unique(x, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return first[order], rank[inverse.ravel()]


def reduce(x, params=UmapParams()):
    """Embed the rows of ``x`` into ``params.n_components`` dimensions.

    With ``params.unique`` identical rows are reduced once and share one
    output coordinate.
    """
    x = _as_array(x)
    if not params.unique:
        return _reduce(x, params)
    keep, inverse = unique_rows(x)
    m = keep.size
    if m < 3:
        coords = np.zeros((m, params.n_components))
        coords[1:, 0] = 1.0
        return coords[inverse]
    if params.n_neighbors >= m:
        log.warning("%d distinct rows: n_neighbors %d clamped to %d", m, params.n_neighbors, m - 1)
        params = dataclasses.replace(params, n_neighbors=max(2, m - 1))
    return _reduce(x[keep], params)[inverse]


def _reduce(x, params):
    graph = fuzzy_graph(x, params)
    a, b = fit_curve(params.min_dist, params.spread)
    return optimize_layout(graph, params, a, b)
