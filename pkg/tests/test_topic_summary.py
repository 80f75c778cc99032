import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from episum.embedding import embed_builtin, tokenize
from episum.hdbscan_cluster import make_labels
from episum.tagging import TagCorpus, make_tag
from episum.topic_summary import (
    augment,
    build_summary,
    fit_lda,
    ngram_range_for,
    parse_summary,
    select_exemplar,
)
from oracles import tokens, top_ngram_by_frequency


@pytest.mark.parametrize(
    "texts,expected",
    [
        (["The door is open.", "The door is closed."], (5, 5)),
        (["The goal is", "The player is at (4, 1)."], (3, 10)),
        (["The player turns left."], (5, 5)),
    ],
)
def test_ngram_range(texts, expected):
    assert ngram_range_for(texts) == expected


def test_ngram_range_empty_cluster():
    with pytest.raises(ValueError):
        ngram_range_for([])


def test_tokenization_keeps_coordinates_apart():
    assert tokenize("(1, 12)") == ["(", "1", ",", "12", ")"]


def test_empty_vocabulary():
    with pytest.raises(ValueError, match="n-grams"):
        fit_lda(["a b"], (3, 3))


def test_identical_tags_give_full_tag():
    texts = ["The door is open."] * 6
    top = fit_lda(texts, ngram_range_for(texts)).top_ngram()
    assert top == tuple(tokenize("The door is open."))


def test_lda_deterministic():
    texts = ["The player turns left.", "The player turns right.", "The player moves forward."]
    a = fit_lda(texts, (2, 4), n_topics=2, seed=5)
    b = fit_lda(texts, (2, 4), n_topics=2, seed=5)
    assert np.array_equal(a.topic_term, b.topic_term)
    np.testing.assert_allclose(a.topic_term.sum(axis=1), 1.0)


word_pool = ["the", "player", "door", "key", "moves", "is", "at", "open", "left", "group", "1", "2"]
cluster_st = st.lists(
    st.lists(st.sampled_from(word_pool), min_size=2, max_size=7).map(" ".join), min_size=1, max_size=12
)


@given(cluster_st, st.integers(0, 1000))
def test_single_topic_matches_frequency_oracle(texts, seed):
    lo, hi = ngram_range_for(texts)
    top = fit_lda(texts, (lo, hi), n_topics=1, seed=seed).top_ngram()
    assert top == top_ngram_by_frequency(texts, lo, hi)
    assert tokens(texts[0]) == tokenize(texts[0])


# ------------------------------------------------------------------ exemplars


def test_full_tag_exemplar():
    texts = ["The door is open.", "The door is closed.", "The door is open."]
    vecs = embed_builtin(texts).vectors
    assert select_exemplar([0, 1, 2], texts, tuple(tokenize("The door is open.")), vecs) == 0


def test_substring_exemplar_nearest_centroid():
    texts = [
        "Marine 1111111111 moves closer to beacon 2222222222.",
        "Marine 3333333333 moves closer to beacon 4444444444.",
        "Marine 1111111111 moves from (1, 2) to (3, 4).",
    ]
    vecs = np.array([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]])
    top = tuple(tokenize("moves closer to beacon"))
    # centroid leans to the second tag among those containing the n-gram
    assert select_exemplar([0, 1, 2], texts, top, vecs, centroid=np.array([0.5, 1.0])) == 1


def test_exemplar_fallback_to_centroid_nearest():
    texts = ["The key is at (1, 1).", "The goal is at (2, 2)."]
    vecs = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert select_exemplar([0, 1], texts, ("absent",), vecs, centroid=np.array([0.1, 1.0])) == 1


def test_augment_nothing_when_all_similar():
    texts = ["a", "b", "c"]
    vecs = np.array([[1.0, 0.0], [0.9, 0.1], [0.95, 0.05]])
    assert augment([0, 1, 2], 0, texts, [0, 1, 2], vecs, 0.6) == []


def test_augment_orthogonal_outlier():
    texts = ["a", "b", "c"]
    vecs = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    assert augment([0, 1, 2], 0, texts, [0, 1, 2], vecs, 0.6) == [(2, 0.0)]


def test_augment_everything_at_threshold_one():
    texts = ["a", "b", "b", "c", "a"]
    vecs = np.random.default_rng(0).normal(size=(5, 4))
    vecs[4] = vecs[0]
    got = augment(range(5), 0, texts, [0, 1, 2, 3, 4], vecs, 1.0)
    assert [texts[i] for i, _ in got] == ["b", "c"]
    assert got[0][0] == 1  # earliest instance kept


# ------------------------------------------------------------------ summaries


def make_fixture(cluster_texts, outliers, noise, n_tags):
    """Corpus and labels: ``cluster_texts[k]`` repeated, ``outliers`` as ``(cluster, text)``."""
    rows = []
    for k, text in enumerate(cluster_texts):
        rows.extend((text, k) for _ in range(8))
    rows.extend((text, k) for k, text in outliers)
    while len(rows) < n_tags:
        rows.append((noise[len(rows) % len(noise)], -1))
    order = np.random.default_rng(0).permutation(len(rows))
    tags = [make_tag(rows[j][0], step) for step, j in enumerate(order)]
    labels = [rows[j][1] for j in order]
    corpus = TagCorpus("fixture", tags)
    # corpus sorts by (step, text); re-align labels with that order
    by_step = {t.step_start: lab for t, lab in zip(tags, labels)}
    aligned = np.array([by_step[t.step_start] for t in corpus.tags])
    emb = embed_builtin(corpus)
    return corpus, make_labels(aligned, emb.vectors, emb), emb


GRID_TEXTS = [
    "The player is at (1, 1).",
    "The player is facing right.",
    "The goal is at (6, 6).",
    "The key is at (1, 2).",
    "The door is at (5, 1).",
    "The door is closed.",
    "The player moves forward.",
    "The player turns left.",
    "The key has been picked up.",
]


def test_nine_clusters_two_augmentations():
    corpus, labels, emb = make_fixture(
        GRID_TEXTS,
        [(0, "The state of the door is unknown."), (4, "The player picks up the key.")],
        ["The player is at (2, 3).", "The player reached the goal."],
        145,
    )
    summary = build_summary(labels, corpus, emb)
    assert len(summary.lines) == 11
    assert round(summary.compression, 3) == 0.076
    assert sum(line.below_threshold for line in summary.lines) == 2


ARENA_TEXTS = [
    f"Marine {m} moves closer to shard {s}." for m, s in [(1402938475, 2938475610), (3847561029, 4756102938)]
] + [
    "Group 1 is dissolved.",
    "Group 2 merges with group 1.",
    "Entities 1402938475, 3847561029 form group 1.",
    "Shard 2938475610 is collected.",
    "Marine 1402938475 collects shard 2938475610.",
    "Shard appears at (4, 9).",
    "Entity 3847561029 leaves group 2.",
    "Group 1 moves from (3, 3) to (5, 6).",
    "Marine 3847561029 moves from (1, 2) to (3, 4).",
    "Beacon 5647382910 moves from (8, 8) to (9, 9).",
]


def test_arena_shape_fifteen_lines():
    corpus, labels, emb = make_fixture(
        ARENA_TEXTS,
        [(0, "The player turns right."), (5, "The door is open."), (9, "The key is at (3, 3).")],
        [f"0 -- {t} Marine 1402938475 moves farther from beacon 5647382910." for t in range(1, 40)],
        530,
    )
    summary = build_summary(labels, corpus, emb, sum_thresh=0.7)
    assert len(summary.lines) == 15
    assert round(summary.compression, 3) == 0.028


@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(0.0, 1.0))
def test_summary_contracts(seed, k, thresh):
    rng = np.random.default_rng(seed)
    pool = GRID_TEXTS + ARENA_TEXTS
    n = 40
    corpus = TagCorpus("r", [make_tag(pool[rng.integers(len(pool))], int(rng.integers(0, 15))) for _ in range(n)])
    lab = rng.integers(-1, k, size=n)
    # relabel to a contiguous range
    remap = {c: i for i, c in enumerate(sorted(set(lab.tolist()) - {-1}))}
    emb = embed_builtin(corpus)
    labels = make_labels(np.array([remap.get(c, -1) for c in lab]), emb.vectors, emb)
    summary = build_summary(labels, corpus, emb, sum_thresh=thresh)
    texts = set(corpus.texts)
    noise_texts_only = {t.text for t, c in zip(corpus.tags, labels.labels) if c == -1} - {
        t.text for t, c in zip(corpus.tags, labels.labels) if c != -1
    }
    assert all(line.text in texts for line in summary.lines)
    assert not any(line.text in noise_texts_only for line in summary.lines)
    steps = [line.step_start for line in summary.lines]
    assert steps == sorted(steps)
    assert sum(not line.below_threshold for line in summary.lines) == labels.n_clusters
    for topic in summary.topics:
        assert all(cos < thresh for _, cos in topic.augmented)
        ex = tuple(tokenize(corpus.tags[topic.exemplar].text))
        if topic.is_full_tag:
            assert ex == tuple(topic.top_ngram)
    # raising the threshold never removes a line
    higher = build_summary(labels, corpus, emb, sum_thresh=min(1.0, thresh + 0.2))
    assert {line.render() for line in summary.lines} <= {line.render() for line in higher.lines}


def test_zero_clusters_is_empty_summary():
    corpus = TagCorpus("z", [make_tag("The player turns left.", i) for i in range(5)])
    emb = embed_builtin(corpus)
    summary = build_summary(make_labels(np.full(5, -1), emb.vectors), corpus, emb)
    assert summary.lines == () and summary.compression == 0.0


def test_render_and_parse_round_trip():
    corpus, labels, emb = make_fixture(
        GRID_TEXTS[:3], [(1, "The player picks up the key.")], ["The goal is at (1, 1)."], 40
    )
    summary = build_summary(labels, corpus, emb)
    text = summary.render()
    assert text.splitlines()[0] == f"tags=40 clusters=3 compression={len(summary.lines) / 40:.3f}"
    assert any(row.endswith("*1*") for row in text.splitlines())
    assert parse_summary(text) == [(line.text, line.cluster_id, line.below_threshold) for line in summary.lines]


def test_parse_summary_requires_header():
    with pytest.raises(ValueError):
        parse_summary("The door is open. 0\n")
