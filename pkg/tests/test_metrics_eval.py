import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.manifold import trustworthiness as sk_trustworthiness
from sklearn.metrics import silhouette_score

from episum.embedding import embed_builtin
from episum.episodes import generate_grid_episode
from episum.hdbscan_cluster import HdbscanParams, hdbscan
from episum.metrics_eval import (
    SWEEP_COLUMNS,
    EvalReport,
    MetricUndefinedError,
    average_reports,
    clustered_fraction,
    evaluate,
    global_cos_sim,
    silhouette,
    sweep,
    trustworthiness,
)
from episum.tagging import tag_episode
from episum.umap_reduce import UmapParams, reduce
from oracles import global_cos_brute, planted_blobs, silhouette_brute, trustworthiness_brute


def test_silhouette_worked_example():
    x = np.array([[0.0], [1.0], [10.0], [11.0]])
    lab = np.array([0, 0, 1, 1])
    assert silhouette_brute(x, lab) == pytest.approx(0.89975, abs=1e-5)
    assert silhouette(x, lab) == pytest.approx(0.89975, abs=1e-5)
    assert (10.5 - 1) / 10.5 == pytest.approx(0.90476, abs=1e-5)


def test_silhouette_co_located_clusters():
    x = np.zeros((6, 2))
    assert silhouette(x, [0, 0, 0, 1, 1, 1]) == pytest.approx(0.0)


def test_silhouette_needs_two_clusters():
    with pytest.raises(MetricUndefinedError, match="silhouette undefined"):
        silhouette(np.ones((4, 2)), [0, 0, -1, 0])


def labelled_instances():
    return st.tuples(st.integers(0, 100_000), st.integers(5, 120), st.integers(2, 6))


@given(labelled_instances())
def test_silhouette_matches_oracle(inst):
    seed, n, k = inst
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    lab = rng.integers(-1, k, size=n)
    lab[:2] = [0, 1]
    assert silhouette(x, lab) == pytest.approx(silhouette_brute(x, lab), abs=1e-9)


def test_silhouette_matches_reference_library():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(80, 2))
    lab = rng.integers(0, 4, size=80)
    assert silhouette(x, lab) == pytest.approx(silhouette_score(x, lab), abs=1e-12)


@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_silhouette_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 2))
    lab = np.arange(30) % 3
    assert silhouette(c * x, lab) == pytest.approx(silhouette(x, lab), abs=1e-9)


def test_global_cos_identical_vectors():
    assert global_cos_sim(np.tile([0.6, 0.8], (5, 1)), [0] * 5) == pytest.approx(1.0)


def test_global_cos_two_axes():
    assert global_cos_sim(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 0]) == pytest.approx(0.70711, abs=1e-5)


def test_global_cos_outer_mean():
    v = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
    assert global_cos_sim(v, [0, 0, 1, 1]) == pytest.approx((math.sqrt(0.5) + 1.0) / 2)


def test_global_cos_zero_centroid():
    with pytest.raises(MetricUndefinedError, match="zero centroid"):
        global_cos_sim(np.array([[1.0, 0.0], [-1.0, 0.0]]), [0, 0])


def test_global_cos_needs_a_cluster():
    with pytest.raises(MetricUndefinedError):
        global_cos_sim(np.eye(3), [-1, -1, -1])


@given(labelled_instances(), st.floats(0.01, 100))
def test_global_cos_matches_oracle_and_scale(inst, c):
    seed, n, k = inst
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 5)) + 2.0
    lab = rng.integers(-1, k, size=n)
    lab[0] = 0
    got = global_cos_sim(v, lab)
    assert got == pytest.approx(global_cos_brute(v, lab), abs=1e-9)
    assert global_cos_sim(c * v, lab) == pytest.approx(got, abs=1e-9)


@pytest.mark.parametrize("labels,expected", [([-1, -1], 0.0), ([0, 1, 0], 100.0), ([0, -1, 1, 1], 75.0), ([], 0.0)])
def test_clustered_fraction(labels, expected):
    assert clustered_fraction(labels) == expected


def test_trustworthiness_identity():
    x = np.random.default_rng(0).normal(size=(50, 3))
    assert trustworthiness(x, x, 5) == pytest.approx(1.0)


def test_trustworthiness_permuted_coordinates():
    x, _ = planted_blobs(3, 30, dim=3, seed=1)
    perm = np.random.default_rng(0).permutation(len(x))
    assert trustworthiness(x, x[perm, :2], 10) < 0.9


@pytest.mark.parametrize("seed", range(5))
def test_trustworthiness_matches_oracles(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 6))
    y = x[:, :2] + rng.normal(scale=0.5, size=(60, 2))
    got = trustworthiness(x, y, 7)
    assert got == pytest.approx(trustworthiness_brute(x, y, 7), abs=1e-12)
    assert got == pytest.approx(sk_trustworthiness(x, y, n_neighbors=7), abs=1e-12)


def test_trustworthiness_k_bound():
    with pytest.raises(ValueError, match="k < n/2"):
        trustworthiness(np.ones((10, 2)), np.ones((10, 2)), 5)


def test_report_mean_and_nan_handling():
    rep = EvalReport(80.0, 0.5, 0.9, 3)
    assert rep.mean == pytest.approx(0.7, abs=1e-12)
    one_cluster = evaluate(np.eye(4) + 1, np.zeros((4, 2)), [0, 0, 0, -1])
    assert math.isnan(one_cluster.sil_score) and one_cluster.global_cos_sim > 0
    avg, excluded = average_reports([rep, one_cluster])
    assert excluded == 1 and avg.sil_score == 0.5


@pytest.fixture(scope="module")
def corpora():
    return [tag_episode(generate_grid_episode("door_key", 8, s)) for s in range(3)]


def test_single_cell_single_episode_equals_evaluate(corpora):
    p = UmapParams(n_epochs=60)
    table = sweep(corpora[:1], [10], [10], umap_params=p)
    emb = embed_builtin(corpora[0])
    coords = reduce(emb, p)
    expected = evaluate(emb, coords, hdbscan(coords, HdbscanParams(min_cluster_size=10), emb))
    assert len(table.rows) == 1
    assert table.rows[0].report == expected


def test_sweep_shape_order_and_determinism(corpora):
    p = UmapParams(n_epochs=40)
    a = sweep(corpora, [15, 10], [10, 5, 15], umap_params=p)
    b = sweep(corpora, [10, 15], [5, 10, 15], umap_params=p, threads=3)
    assert len(a.rows) == 6
    assert [(r.n_neighbors, r.min_cluster_size) for r in a.rows] == [(nn, m) for nn in (10, 15) for m in (5, 10, 15)]
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == ",".join(SWEEP_COLUMNS)
    assert a.best() in a.rows


def test_sweep_needs_episodes():
    with pytest.raises(ValueError):
        sweep([])
