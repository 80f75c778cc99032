"""End-to-end tag -> embed -> reduce -> cluster -> summarize -> evaluate runs.

A run is captured as a self-contained JSON artifact.  The artifact carries
the config, seeds, tag corpus and embedding descriptor, so replaying it
reproduces the same bytes.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import math
import os

import numpy as np

from .embedding import embed_builtin, load_embeddings
from .errors import EpisumError
from .hdbscan_cluster import HdbscanParams, hdbscan
from .metrics_eval import evaluate
from .tagging import dumps_corpus, loads_corpus
from .topic_summary import build_summary
from .umap_reduce import UmapParams, reduce

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1


class StageError(EpisumError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except StageError:
        raise
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        raise StageError(name, exc) from exc


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    n_neighbors: int = 10
    min_cluster_size: int = 10
    sum_thresh: float = 0.6
    min_samples: int = 1
    selection: str = "leaf"
    n_epochs: int = 500
    min_dist: float = 0.0
    metric: str = "cosine"
    embed_dim: int = 384
    timestamps: bool = False
    n_topics: int = 1
    lda_iters: int = 200
    seed: int = 0

    @classmethod
    def from_mapping(cls, values):
        """Build from string or typed values; unknown keys raise ``ValueError``."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in fields:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(fields[name].type, raw, key)
        return cls(**kwargs)

    def umap_params(self, n_items=None):
        nn = self.n_neighbors
        if n_items is not None and nn >= n_items:
            log.warning("corpus of %d tags: n_neighbors %d clamped to %d", n_items, nn, n_items - 1)
            nn = n_items - 1
        return UmapParams(
            n_neighbors=nn, min_dist=self.min_dist, metric=self.metric, n_epochs=self.n_epochs, seed=self.seed
        )

    def hdbscan_params(self):
        return HdbscanParams(self.min_cluster_size, self.min_samples, self.selection)


def _coerce(kind, raw, key):
    if not isinstance(raw, str):
        return raw
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("bool", bool):
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
    except ValueError:
        raise ValueError(f"config value for {key!r} is not a valid {kind}: {raw!r}") from None
    return raw.strip()


def read_config_file(path):
    """``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            key, sep, value = body.partition("=")
            if not sep:
                raise ValueError(f"{path}:{n}: expected key=value, got {body!r}")
            out[key.strip()] = value.strip()
    return out


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclasses.dataclass(frozen=True, eq=False)
class RunResult:
    corpus: object
    embeddings: object
    coords: np.ndarray
    labels: object
    summary: object
    report: object
    artifact: dict

    def artifact_json(self):
        return dumps_artifact(self.artifact)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def run_corpus(corpus, config=PipelineConfig(), embeddings_path=None):
    """Run every stage on a tag corpus and assemble the run artifact."""
    if len(corpus) < 3:
        raise StageError("tag", ValueError(f"corpus has {len(corpus)} tags, need at least 3"))
    with stage("embed"):
        if embeddings_path is None:
            emb = embed_builtin(corpus, dim=config.embed_dim)
            source = {"kind": "builtin", "dim": config.embed_dim}
        else:
            emb = load_embeddings(embeddings_path, corpus)
            source = {
                "kind": "external",
                "name": os.path.basename(os.fspath(embeddings_path)),
                "sha256": sha256_file(embeddings_path),
                "dim": emb.dim,
            }
    with stage("reduce"):
        coords = reduce(emb, config.umap_params(len(corpus)))
    with stage("cluster"):
        labels = hdbscan(coords, config.hdbscan_params(), emb)
    with stage("summarize"):
        summary = build_summary(
            labels, corpus, emb, config.sum_thresh, config.n_topics, config.lda_iters, config.seed
        )
    with stage("evaluate"):
        report = evaluate(emb, coords, labels)
    artifact = {
        "version": ARTIFACT_VERSION,
        "config": dataclasses.asdict(config),
        "seeds": {"umap": config.seed, "lda": config.seed, "embed": 0},
        "corpus": dumps_corpus(corpus),
        "embedding": source,
        "coords": coords.tolist(),
        "labels": labels.labels.tolist(),
        "summary": summary.render(),
        "report": {k: _clean(v) for k, v in report.as_dict().items()},
    }
    return RunResult(corpus, emb, coords, labels, summary, report, artifact)


def dumps_artifact(artifact):
    return json.dumps(artifact, sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads_artifact(text):
    obj = json.loads(text)
    if obj.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"unsupported run artifact version {obj.get('version')!r}")
    return obj


def replay(artifact, embeddings_path=None):
    """Re-run an artifact from its embedded config and corpus.

    External embeddings must be supplied again; their hash is checked.
    """
    config = PipelineConfig.from_mapping(artifact["config"])
    corpus = loads_corpus(artifact["corpus"])
    source = artifact["embedding"]
    if source["kind"] == "external":
        if embeddings_path is None:
            raise StageError("embed", ValueError(f"replay needs the external embedding file {source['name']!r}"))
        digest = sha256_file(embeddings_path)
        if digest != source["sha256"]:
            raise StageError("embed", ValueError(f"embedding file hash {digest[:12]} does not match the artifact"))
    else:
        embeddings_path = None
    return run_corpus(corpus, config, embeddings_path)
