import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from episum.embedding import save_embeddings
from episum.hdbscan_cluster import NOISE, HdbscanParams, make_labels
from episum.latent import LatentResult, LatentSeries, cluster_latents, load_latents, synth_latents, transitions


def test_load_file_keeps_step_order(tmp_path):
    x = np.random.default_rng(0).normal(size=(24, 2048))
    save_embeddings(x, tmp_path / "ep7.latents", binary=True)
    series = load_latents(tmp_path / "ep7.latents")
    assert len(series) == 24 and series.dim == 2048
    assert series.episode_ref == "ep7"
    np.testing.assert_allclose(series.vectors, x.astype(np.float32), rtol=0)


def test_load_rejects_nan_row(tmp_path):
    x = np.ones((5, 4))
    x[3, 0] = np.nan
    save_embeddings(x, tmp_path / "l.txt")
    with pytest.raises(ValueError, match="row 3"):
        load_latents(tmp_path / "l.txt")


def test_load_rejects_empty_file(tmp_path):
    (tmp_path / "l.txt").write_text("dim=4 count=0\n")
    with pytest.raises(ValueError, match="no vectors"):
        load_latents(tmp_path / "l.txt")


def test_series_is_read_only_and_finite():
    s = LatentSeries("x", np.zeros((3, 2)))
    with pytest.raises(ValueError):
        s.vectors[0, 0] = 1.0
    with pytest.raises(ValueError):
        LatentSeries("x", np.array([[np.inf, 0.0]]))
    with pytest.raises(ValueError):
        LatentSeries("x", np.zeros(4))


def test_synthetic_construction():
    s = synth_latents(3, 8, 2048, 0.01, seed=4)
    assert s.vectors.shape == (24, 2048) and s.source == "synthetic"
    assert np.array_equal(s.vectors, synth_latents(3, 8, 2048, 0.01, seed=4).vectors)
    seg = s.vectors.reshape(3, 8, 2048)
    centres = seg.mean(axis=1)
    spread = max(np.linalg.norm(seg[i] - centres[i], axis=1).max() for i in range(3))
    assert spread <= 0.01 + 1e-12
    for i, j in itertools.combinations(range(3), 2):
        assert np.linalg.norm(centres[i] - centres[j]) >= 20 * 0.01


@pytest.mark.parametrize("drift", [0.05, 0.5])
def test_separation_holds_for_large_drift(drift):
    s = synth_latents(4, 5, 16, drift, seed=1)
    seg = s.vectors.reshape(4, 5, 16).mean(axis=1)
    gaps = np.linalg.norm(np.diff(seg, axis=0), axis=1)
    assert np.all(gaps >= 20 * drift * 0.9)


@given(st.lists(st.integers(-1, 3), min_size=1, max_size=40))
def test_transitions_are_label_changes(labels):
    got = transitions(np.array(labels))
    assert got == tuple(t for t in range(len(labels) - 1) if labels[t] != labels[t + 1])


@pytest.mark.parametrize("seed", range(10))
def test_planted_segments_recovered(seed):
    res = cluster_latents(synth_latents(3, 8, 2048, 0.01, seed))
    assert res.labels.n_clusters == 3
    assert np.all(res.labels.labels != NOISE)
    assert res.transitions == (7, 15)
    assert res.report().splitlines()[0] == "steps=24 clusters=3 clustered=100.0%"


def test_single_segment_has_no_clustered_transitions():
    res = cluster_latents(synth_latents(1, 24, 64, 0.01, seed=2))
    lab = res.labels.labels
    assert res.labels.n_clusters <= 1
    clustered = lab[lab != NOISE]
    assert np.all(clustered == clustered[0]) if clustered.size else res.unclusterable


def test_unclusterable_report():
    x = np.random.default_rng(3).normal(size=(24, 50))
    res = cluster_latents(LatentSeries("diffuse", x), hdbscan_params=HdbscanParams(min_cluster_size=13))
    assert res.unclusterable and res.transitions == ()
    assert res.report().endswith("unclusterable: all steps are noise\n")


def test_report_names_noise():
    lab = np.array([0, 0, -1, 1, 1, 1])
    res = LatentResult(make_labels(lab, np.zeros((6, 2))), np.zeros((6, 2)), transitions(lab))
    assert res.report() == ("steps=6 clusters=2 clustered=83.3%\nstep=1 from=0 to=noise\nstep=2 from=noise to=1\n")


def test_tiny_series_clamps_neighbours():
    res = cluster_latents(synth_latents(2, 4, 32, 0.01, seed=0), hdbscan_params=HdbscanParams(min_cluster_size=3))
    assert len(res.labels) == 8
