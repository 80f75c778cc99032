"""Tag embeddings: a deterministic hashing embedder and external-vector ingestion.

Embedding file formats
----------------------
Text: a header line ``dim=<D> count=<N>`` followed by ``N`` lines of ``D``
space-separated decimal floats.

Binary: an 8-byte header holding ``D`` then ``N`` as little-endian unsigned
32-bit integers, followed by ``N * D`` little-endian 32-bit floats in
row-major order.

Files starting with the bytes ``dim=`` are read as text, anything else as
binary.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import re
import struct

import numpy as np

from .errors import ParseError

_TOKEN = re.compile(r"\w+|[^\w\s]")


def tokenize(text):
    """Lowercase word tokens with punctuation split off as separate tokens."""
    return _TOKEN.findall(text.lower())


@dataclasses.dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    vectors: np.ndarray  # (n, dim), unit rows
    source: str = "builtin"

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-d, got shape {v.shape}")
        if v.shape[1] < 2:
            raise ValueError(f"embedding dim must be >= 2, got {v.shape[1]}")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]


def _features(text, char_ngrams, word_ngrams):
    padded = f" {text.lower()} "
    for n in range(char_ngrams[0], char_ngrams[1] + 1):
        for i in range(len(padded) - n + 1):
            yield "c:" + padded[i : i + n]
    tokens = tokenize(text)
    for n in range(word_ngrams[0], word_ngrams[1] + 1):
        for i in range(len(tokens) - n + 1):
            yield "w:" + " ".join(tokens[i : i + n])


def hash_text(text, dim=384, char_ngrams=(3, 5), word_ngrams=(1, 3), seed=0):
    """Signed, TF-weighted feature-hashing vector of one text (L2-normalised)."""
    if not text:
        raise ValueError("cannot embed an empty tag text")
    key = int(seed).to_bytes(8, "little", signed=False)
    vec = np.zeros(dim)
    for feat in _features(text, char_ngrams, word_ngrams):
        h = int.from_bytes(hashlib.blake2b(feat.encode("utf-8"), digest_size=8, key=key).digest(), "little")
        vec[h % dim] += 1.0 if (h >> 63) & 1 == 0 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ValueError(f"hashed features cancel out for {text!r}")
    return vec / norm


def embed_builtin(corpus, dim=384, char_ngrams=(3, 5), word_ngrams=(1, 3), seed=0):
    """Embed every tag in ``corpus`` with the hashing embedder."""
    if dim < 64:
        raise ValueError(f"dim must be >= 64, got {dim}")
    texts = [t.text if hasattr(t, "text") else t for t in corpus]
    cache = {}
    rows = np.empty((len(texts), dim))
    for i, text in enumerate(texts):
        if text not in cache:
            cache[text] = hash_text(text, dim, char_ngrams, word_ngrams, seed)
        rows[i] = cache[text]
    return EmbeddingMatrix(rows, "builtin")


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def normalize_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"row {zero[0]} is a zero vector")
    return x / norms[:, None]


def read_vectors(path):
    """Read a raw (unnormalised) vector file in either supported format."""
    with open(os.fspath(path), "rb") as fh:
        raw = fh.read()
    if raw.startswith(b"dim="):
        return _parse_text(raw)
    return _parse_binary(raw)


def _parse_text(raw):
    lines = raw.split(b"\n")
    m = re.fullmatch(rb"dim=(\d+) count=(\d+)\r?", lines[0])
    if m is None:
        raise ParseError("bad header, expected 'dim=<D> count=<N>'", 0, "header")
    dim, count = int(m.group(1)), int(m.group(2))
    if dim < 2:
        raise ValueError(f"embedding dim must be >= 2, got {dim}")
    offset = len(lines[0]) + 1
    rows = []
    for i, line in enumerate(lines[1:]):
        if not line.strip():
            offset += len(line) + 1
            continue
        try:
            vals = [float(tok) for tok in line.split()]
        except ValueError:
            raise ParseError(f"row {len(rows)} is not numeric", offset, f"rows[{len(rows)}]") from None
        if len(vals) != dim:
            raise ParseError(
                f"row {len(rows)} has {len(vals)} values, expected {dim}", offset, f"rows[{len(rows)}]"
            )
        rows.append(vals)
        offset += len(line) + 1
    if len(rows) != count:
        raise ParseError(f"header declares {count} rows but file has {len(rows)}", offset, "count")
    return np.array(rows, dtype=np.float64).reshape(count, dim)


def _parse_binary(raw):
    if len(raw) < 8:
        raise ParseError("binary embedding file shorter than its 8-byte header", len(raw), "header")
    dim, count = struct.unpack("<II", raw[:8])
    if dim < 2:
        raise ValueError(f"embedding dim must be >= 2, got {dim}")
    need = 8 + 4 * dim * count
    if len(raw) != need:
        raise ParseError(f"binary payload is {len(raw)} bytes, header implies {need}", min(len(raw), need), "data")
    return np.frombuffer(raw, dtype="<f4", offset=8).astype(np.float64).reshape(count, dim)


def check_finite(x):
    bad = np.flatnonzero(~np.all(np.isfinite(x), axis=1))
    if bad.size:
        raise ValueError(f"row {bad[0]} contains non-finite values")


def load_embeddings(path, corpus):
    """Load externally produced vectors aligned with ``corpus`` and normalise them."""
    x = read_vectors(path)
    if x.shape[0] != len(corpus):
        raise ValueError(f"embedding file has {x.shape[0]} rows but the corpus has {len(corpus)} tags")
    check_finite(x)
    name = os.path.basename(os.fspath(path))
    return EmbeddingMatrix(normalize_rows(x), f"external:{name}")


def dumps_embeddings_text(x):
    x = np.asarray(x, dtype=np.float64)
    lines = [f"dim={x.shape[1]} count={x.shape[0]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in x]
    return "\n".join(lines) + "\n"


def dumps_embeddings_binary(x):
    x = np.asarray(x)
    return struct.pack("<II", x.shape[1], x.shape[0]) + np.ascontiguousarray(x, dtype="<f4").tobytes()


def save_embeddings(x, path, binary=False):
    from .episodes import atomic_write

    x = getattr(x, "vectors", x)
    atomic_write(path, dumps_embeddings_binary(x) if binary else dumps_embeddings_text(x))
