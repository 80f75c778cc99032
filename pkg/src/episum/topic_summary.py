"""Extractive per-cluster summaries from LDA topic exemplars.

For each cluster, an LDA model over word n-grams (lengths spanning the
cluster's shortest to longest tag) proposes a top n-gram.  The exemplar is
the tag nearest the cluster centroid that equals or contains that n-gram.
Cluster tags whose cosine similarity to the exemplar falls below
``sum_thresh`` are appended, and everything is sorted by step.
"""

from __future__ import annotations

import dataclasses
import logging

import numba
import numpy as np

from ._rng import make_state, xorshift
from .embedding import tokenize

log = logging.getLogger(__name__)

DEFAULT_SUM_THRESH = 0.6


@dataclasses.dataclass(frozen=True, eq=False)
class TopicModel:
    vocab: tuple  # n-gram token tuples, in first-appearance order
    topic_term: np.ndarray  # (n_topics, V), rows sum to 1
    topic_sizes: np.ndarray  # tokens assigned per topic

    def top_ngram(self):
        """Highest-weight n-gram of the largest topic; ties favour longer, then earlier n-grams."""
        k = int(np.argmax(self.topic_sizes))
        row = self.topic_term[k]
        best = min(range(len(self.vocab)), key=lambda w: (-row[w], -len(self.vocab[w]), w))
        return self.vocab[best]


@dataclasses.dataclass(frozen=True)
class TopicResult:
    cluster_id: int
    top_ngram: tuple
    is_full_tag: bool
    exemplar: int  # corpus index
    augmented: tuple  # of (corpus index, cosine to exemplar)


@dataclasses.dataclass(frozen=True)
class SummaryLine:
    text: str
    cluster_id: int
    below_threshold: bool
    step_start: int

    def render(self):
        cid = f"*{self.cluster_id}*" if self.below_threshold else str(self.cluster_id)
        return f"{self.text} {cid}"


@dataclasses.dataclass(frozen=True)
class Summary:
    lines: tuple
    n_tags: int
    n_clusters: int
    topics: tuple = ()

    @property
    def compression(self):
        return len(self.lines) / self.n_tags if self.n_tags else 0.0

    def render(self):
        head = f"tags={self.n_tags} clusters={self.n_clusters} compression={self.compression:.3f}"
        return "\n".join([head] + [line.render() for line in self.lines]) + "\n"


def ngram_range_for(texts):
    if not texts:
        raise ValueError("cannot derive an n-gram range for an empty cluster")
    lengths = [len(tokenize(t)) for t in texts]
    return min(lengths), max(lengths)


def ngrams(tokens, lo, hi):
    out = []
    for n in range(lo, hi + 1):
        out.extend(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    return out


@numba.njit(cache=True)
def _gibbs(doc, word, z, ndk, nkw, nk, alpha, beta, iters, state):
    n_topics = nk.shape[0]
    vbeta = beta * nkw.shape[1]
    p = np.empty(n_topics)
    for _ in range(iters):
        for i in range(doc.shape[0]):
            d, w, k = doc[i], word[i], z[i]
            ndk[d, k] -= 1
            nkw[k, w] -= 1
            nk[k] -= 1
            total = 0.0
            for t in range(n_topics):
                total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
                p[t] = total
            u = (xorshift(state) / 4294967296.0) * total
            k = 0
            while k < n_topics - 1 and p[k] <= u:
                k += 1
            z[i] = k
            ndk[d, k] += 1
            nkw[k, w] += 1
            nk[k] += 1


def fit_lda(texts, ngram_range, n_topics=1, iters=200, seed=0, alpha=None, beta=0.01):
    """Collapsed Gibbs LDA where documents are tags and terms are word n-grams."""
    lo, hi = ngram_range
    vocab = {}
    doc_ids, word_ids = [], []
    for d, text in enumerate(texts):
        for g in ngrams(tokenize(text), lo, hi):
            doc_ids.append(d)
            word_ids.append(vocab.setdefault(g, len(vocab)))
    if not vocab:
        raise ValueError(f"no n-grams of length {lo}..{hi} in the cluster")
    alpha = 50.0 / n_topics if alpha is None else alpha
    doc = np.array(doc_ids, dtype=np.int64)
    word = np.array(word_ids, dtype=np.int64)
    rng = np.random.default_rng([seed, 7])
    z = rng.integers(n_topics, size=doc.shape[0]).astype(np.int64)
    ndk = np.zeros((len(texts), n_topics), dtype=np.int64)
    nkw = np.zeros((n_topics, len(vocab)), dtype=np.int64)
    nk = np.zeros(n_topics, dtype=np.int64)
    np.add.at(ndk, (doc, z), 1)
    np.add.at(nkw, (z, word), 1)
    np.add.at(nk, z, 1)
    _gibbs(doc, word, z, ndk, nkw, nk, float(alpha), float(beta), int(iters), make_state(seed, 3))
    phi = (nkw + beta) / (nk[:, None] + beta * len(vocab))
    return TopicModel(tuple(vocab), phi, nk)


def _cosines(vectors, target):
    norms = np.linalg.norm(vectors, axis=1) * np.linalg.norm(target)
    return vectors @ target / np.where(norms > 0, norms, 1.0)


def select_exemplar(indices, texts, top_ngram, vectors, centroid=None):
    """Corpus index of the cluster's exemplar tag.

    Candidates are tags whose tokens equal ``top_ngram``; failing that, tags
    containing it as a contiguous token run; failing that, every tag.  The
    candidate most cosine-similar to the embedding centroid wins (lowest
    index on ties).
    """
    indices = list(indices)
    vectors = np.asarray(vectors, dtype=np.float64)
    if centroid is None:
        centroid = vectors[indices].mean(axis=0)
    sims = _cosines(vectors[indices], centroid)
    target = tuple(top_ngram)
    n = len(target)
    toks = [tuple(tokenize(texts[i])) for i in indices]
    full = [j for j, t in enumerate(toks) if t == target]
    cands = full or [
        j for j, t in enumerate(toks) if any(t[s : s + n] == target for s in range(len(t) - n + 1))
    ]
    if not cands:
        log.info("no tag contains n-gram %r; falling back to the centroid-nearest tag", " ".join(target))
        cands = list(range(len(indices)))
    best = min(cands, key=lambda j: (-sims[j], indices[j]))
    return indices[best]


def augment(indices, exemplar, texts, steps, vectors, sum_thresh=DEFAULT_SUM_THRESH):
    """Cluster tags dissimilar to the exemplar: ``[(index, cosine), ...]``.

    Texts are deduplicated, keeping the earliest-step instance.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    sims = _cosines(vectors, vectors[exemplar])
    out = []
    seen = {texts[exemplar]}
    for i in sorted(indices, key=lambda i: (steps[i], i)):
        if texts[i] in seen:
            continue
        if sims[i] < sum_thresh:
            seen.add(texts[i])
            out.append((i, float(sims[i])))
    return out


def summarize_cluster(cid, indices, corpus, vectors, sum_thresh, n_topics=1, iters=200, seed=0):
    texts = [t.text for t in corpus.tags]
    steps = [t.step_start for t in corpus.tags]
    members = [texts[i] for i in indices]
    model = fit_lda(members, ngram_range_for(members), n_topics, iters, seed)
    top = model.top_ngram()
    ex = select_exemplar(indices, texts, top, vectors)
    is_full = tuple(tokenize(texts[ex])) == tuple(top)
    extra = augment(indices, ex, texts, steps, vectors, sum_thresh)
    return TopicResult(cid, top, is_full, ex, tuple(extra))


def build_summary(labels, corpus, embeddings, sum_thresh=DEFAULT_SUM_THRESH, n_topics=1, iters=200, seed=0):
    """Step-sorted extractive summary; noise tags never appear."""
    vectors = np.asarray(getattr(embeddings, "vectors", embeddings), dtype=np.float64)
    topics = []
    lines = []
    for cid, members in enumerate(labels.members):
        res = summarize_cluster(cid, list(members), corpus, vectors, sum_thresh, n_topics, iters, seed)
        topics.append(res)
        tag = corpus.tags[res.exemplar]
        lines.append(SummaryLine(tag.text, cid, False, tag.step_start))
        for i, _ in res.augmented:
            t = corpus.tags[i]
            lines.append(SummaryLine(t.text, cid, True, t.step_start))
    lines.sort(key=lambda s: (s.step_start, s.cluster_id, s.below_threshold, s.text))
    return Summary(tuple(lines), len(corpus), labels.n_clusters, tuple(topics))


def parse_summary(text):
    """Inverse of :meth:`Summary.render` for the line records: ``[(text, cid, below)]``."""
    rows = text.splitlines()
    if not rows or not rows[0].startswith("tags="):
        raise ValueError("summary file lacks its header line")
    out = []
    for row in rows[1:]:
        body, _, cid = row.rpartition(" ")
        below = cid.startswith("*") and cid.endswith("*")
        out.append((body, int(cid.strip("*")), below))
    return out
