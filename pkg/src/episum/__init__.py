"""Episode summarization from templated tags.

Tags describing a game episode are embedded, reduced with UMAP, clustered
with HDBSCAN and condensed to a short step-ordered extractive summary.
"""

from .embedding import EmbeddingMatrix, embed_builtin, load_embeddings
from .episodes import Episode, generate_grid_episode, generate_multientity_episode, load_episode, save_episode
from .errors import ConvergenceError, EpisumError, GenerationError, InvariantError, ParseError
from .hdbscan_cluster import NOISE, ClusterLabels, HdbscanParams, hdbscan
from .latent import LatentSeries, cluster_latents, load_latents, synth_latents
from .metrics_eval import EvalReport, evaluate, global_cos_sim, silhouette, sweep, trustworthiness
from .moments import central_moments, infer_direction, orientation
from .pipeline import PipelineConfig, replay, run_corpus
from .tagging import Tag, TagCorpus, tag_episode
from .topic_summary import Summary, build_summary
from .umap_reduce import UmapParams, reduce

__version__ = "0.1.0"

__all__ = [
    "NOISE",
    "ClusterLabels",
    "ConvergenceError",
    "EmbeddingMatrix",
    "Episode",
    "EpisumError",
    "EvalReport",
    "GenerationError",
    "HdbscanParams",
    "InvariantError",
    "LatentSeries",
    "ParseError",
    "PipelineConfig",
    "Summary",
    "Tag",
    "TagCorpus",
    "UmapParams",
    "build_summary",
    "central_moments",
    "cluster_latents",
    "embed_builtin",
    "evaluate",
    "generate_grid_episode",
    "generate_multientity_episode",
    "global_cos_sim",
    "hdbscan",
    "infer_direction",
    "load_embeddings",
    "load_episode",
    "load_latents",
    "orientation",
    "reduce",
    "replay",
    "run_corpus",
    "save_episode",
    "silhouette",
    "sweep",
    "synth_latents",
    "tag_episode",
    "trustworthiness",
]
