"""Command-line front end.

Subcommands: gen, tag, pipeline, sweep, latents, replay.  Exit status is 0 on
success, 1 when a stage fails and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import glob
import logging
import os
import sys

from .episodes import (
    LAYOUTS,
    atomic_write,
    generate_grid_episode,
    generate_multientity_episode,
    load_episode,
    save_episode,
)
from .errors import EpisumError
from .hdbscan_cluster import HdbscanParams
from .latent import cluster_latents, load_latents, synth_latents
from .metrics_eval import DEFAULT_MCS, DEFAULT_NEIGHBORS, SWEEP_COLUMNS, sweep
from .pipeline import PipelineConfig, StageError, loads_artifact, read_config_file, replay, run_corpus, stage
from .plotting import render_latents, render_scatter, render_sweep
from .tagging import load_corpus, save_corpus, tag_episode

log = logging.getLogger("episum")

ENVS = tuple(LAYOUTS) + ("arena",)
EPISODE_EXT = ".episode"
CORPUS_EXT = ".tags"

# flag name -> PipelineConfig field, for flags that override config values
_OVERRIDES = {
    "n_neighbors": "n_neighbors",
    "min_cluster_size": "min_cluster_size",
    "sum_thresh": "sum_thresh",
    "min_samples": "min_samples",
    "selection": "selection",
    "n_epochs": "n_epochs",
    "min_dist": "min_dist",
    "metric": "metric",
    "embed_dim": "embed_dim",
    "timestamps": "timestamps",
}


def _int_list(text):
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _globals():
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed (default 0)")
    p.add_argument("--threads", type=_positive, default=argparse.SUPPRESS, help="worker cap (default 1)")
    p.add_argument("--config", default=argparse.SUPPRESS, help="key=value config file")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def _model_flags(p, mcs_flags=("--min-cluster-size", "--mcs")):
    p.add_argument("--n-neighbors", type=int)
    p.add_argument(*mcs_flags, dest="min_cluster_size", type=int)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--selection", choices=("leaf", "excess_of_mass"))
    p.add_argument("--n-epochs", type=int)
    p.add_argument("--min-dist", type=float)
    p.add_argument("--metric", choices=("cosine", "euclidean"))


def build_parser():
    g = _globals()
    parser = argparse.ArgumentParser(prog="episum", description=__doc__.splitlines()[0], parents=[g])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[g], help="generate episode files")
    p.add_argument("--env", required=True, choices=ENVS)
    p.add_argument("--n", type=_positive, default=1)
    p.add_argument("--size", type=int, default=10, help="grid size in cells")
    p.add_argument("--cell-px", type=int, default=None, help="also store rendered frames")
    p.add_argument("--marines", type=int, default=4)
    p.add_argument("--shards", type=int, default=4)
    p.add_argument("--beacons", type=int, default=0)
    p.add_argument("--arena-size", type=int, default=32)
    p.add_argument("--length", type=int, default=60)
    p.add_argument("--out", required=True)

    p = sub.add_parser("tag", parents=[g], help="tag episode files")
    p.add_argument("episodes", nargs="+")
    p.add_argument("--timestamps", action="store_true", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", parents=[g], help="summarize episodes or tag corpora")
    p.add_argument("inputs", nargs="+")
    _model_flags(p)
    p.add_argument("--sum-thresh", type=float)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--timestamps", action="store_true", default=None)
    p.add_argument("--embeddings", help="external vectors aligned with the (single) input corpus")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", parents=[g], help="grid search over n_neighbors x min_cluster_size")
    p.add_argument("episode_dir")
    p.add_argument("--neighbors", type=_int_list, default=DEFAULT_NEIGHBORS)
    p.add_argument("--mcs", type=_int_list, default=DEFAULT_MCS)
    p.add_argument("--n-epochs", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--timestamps", action="store_true", default=None)
    p.add_argument("--out", required=True, help="CSV path; a heatmap SVG is written beside it")

    p = sub.add_parser("latents", parents=[g], help="cluster stepwise latent vectors")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="latent file in the embedding format")
    src.add_argument("--synthetic", action="store_true", help="use a planted 3-segment series")
    p.add_argument("--segments", type=int, default=3)
    p.add_argument("--steps-per-segment", type=int, default=8)
    p.add_argument("--dim", type=int, default=2048)
    p.add_argument("--drift", type=float, default=0.01)
    _model_flags(p, ("--mcs", "--min-cluster-size"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", parents=[g], help="re-run a saved run artifact")
    p.add_argument("artifact")
    p.add_argument("--embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--check", action="store_true", help="exit 1 unless the replay is byte-identical")
    return parser


def resolve_config(args):
    """Defaults < config file < command-line flags."""
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    if hasattr(args, "seed"):
        values["seed"] = args.seed
    for flag, field in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[field] = v
    return PipelineConfig.from_mapping(values)


def _mkdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _map(fn, items, threads):
    """Order-preserving parallel map."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _stem(path):
    name = os.path.basename(path)
    for ext in (EPISODE_EXT, CORPUS_EXT):
        if name.endswith(ext):
            return name[: -len(ext)]
    return os.path.splitext(name)[0]


def load_input_corpus(path, timestamps):
    with stage("load"):
        if path.endswith(CORPUS_EXT):
            return load_corpus(path)
        episode = load_episode(path)
    with stage("tag"):
        return tag_episode(episode, with_timestamps=timestamps)


def cmd_gen(args):
    out = _mkdir(args.out)
    seed = getattr(args, "seed", 0)

    def one(i):
        s = seed + i
        with stage("gen"):
            if args.env == "arena":
                ep = generate_multientity_episode(
                    args.marines, args.shards, args.arena_size, s, length=args.length, n_beacons=args.beacons
                )
            else:
                ep = generate_grid_episode(args.env, args.size, s, cell_px=args.cell_px)
        path = os.path.join(out, f"{args.env}-{i:04d}{EPISODE_EXT}")
        save_episode(ep, path)
        return path

    for path in _map(one, list(range(args.n)), getattr(args, "threads", 1)):
        print(path)
    return 0


def cmd_tag(args):
    out = _mkdir(args.out)
    cfg = resolve_config(args)

    def one(path):
        corpus = load_input_corpus(path, cfg.timestamps)
        dest = os.path.join(out, _stem(path) + CORPUS_EXT)
        save_corpus(corpus, dest)
        return dest, len(corpus)

    for dest, n in _map(one, args.episodes, getattr(args, "threads", 1)):
        print(f"{dest}\t{n} tags")
    return 0


def _report_csv(name, result):
    r = result.report
    head = "input,n_tags,n_clusters,n_lines,compression,clustered_pct,sil_score,global_cos_sim,mean"
    cells = [
        name,
        str(len(result.corpus)),
        str(r.n_clusters),
        str(len(result.summary.lines)),
        f"{result.summary.compression:.6f}",
    ] + [("nan" if v != v else f"{v:.6f}") for v in (r.clustered_pct, r.sil_score, r.global_cos_sim, r.mean)]
    return head + "\n" + ",".join(cells) + "\n"


def write_run(out, name, result):
    paths = {
        "artifact": os.path.join(out, f"{name}.run.json"),
        "summary": os.path.join(out, f"{name}.summary.txt"),
        "figure": os.path.join(out, f"{name}.svg"),
        "report": os.path.join(out, f"{name}.report.csv"),
    }
    atomic_write(paths["artifact"], result.artifact_json())
    atomic_write(paths["summary"], result.summary.render())
    with stage("render"):
        svg = render_scatter(result.coords, result.labels, result.summary, n_tags=len(result.corpus), title=name)
    atomic_write(paths["figure"], svg)
    atomic_write(paths["report"], _report_csv(name, result))
    return paths


def cmd_pipeline(args):
    if args.embeddings and len(args.inputs) != 1:
        raise StageError("embed", ValueError("--embeddings needs exactly one input"))
    cfg = resolve_config(args)
    out = _mkdir(args.out)

    def one(path):
        corpus = load_input_corpus(path, cfg.timestamps)
        result = run_corpus(corpus, cfg, args.embeddings)
        return write_run(out, _stem(path), result), result

    for paths, result in _map(one, args.inputs, getattr(args, "threads", 1)):
        print(
            f"{paths['summary']}\ttags={len(result.corpus)} clusters={result.labels.n_clusters} "
            f"compression={result.summary.compression:.3f}"
        )
    return 0


def _episode_files(directory):
    files = sorted(glob.glob(os.path.join(directory, "*" + EPISODE_EXT)))
    files += sorted(glob.glob(os.path.join(directory, "*" + CORPUS_EXT)))
    return files


def cmd_sweep(args):
    cfg = resolve_config(args)
    if not os.path.isdir(args.episode_dir):
        raise StageError("load", FileNotFoundError(f"not a directory: {args.episode_dir}"))
    files = _episode_files(args.episode_dir)
    if not files:
        raise StageError("load", ValueError(f"no {EPISODE_EXT} or {CORPUS_EXT} files in {args.episode_dir}"))
    corpora = [load_input_corpus(f, cfg.timestamps) for f in files]
    with stage("sweep"):
        table = sweep(
            corpora,
            args.neighbors,
            args.mcs,
            cfg.umap_params(),
            cfg.hdbscan_params(),
            cfg.embed_dim,
            getattr(args, "threads", 1),
        )
    atomic_write(args.out, table.to_csv())
    with stage("render"):
        atomic_write(os.path.splitext(args.out)[0] + ".svg", render_sweep(table))
    best = table.best()
    if best is not None:
        print(",".join(SWEEP_COLUMNS))
        print(",".join(best.cells()))
    return 0


def cmd_latents(args):
    cfg = resolve_config(args)
    out = _mkdir(args.out)
    with stage("load"):
        if args.synthetic:
            series = synth_latents(args.segments, args.steps_per_segment, args.dim, args.drift, cfg.seed)
        else:
            series = load_latents(args.input)
    hp = HdbscanParams(
        args.min_cluster_size if args.min_cluster_size is not None else 5, cfg.min_samples, cfg.selection
    )
    with stage("cluster"):
        result = cluster_latents(series, cfg.umap_params(), hp)
    name = series.episode_ref
    atomic_write(os.path.join(out, f"{name}.transitions.txt"), result.report())
    with stage("render"):
        svg = render_latents(result.coords, result.labels, title=name)
    atomic_write(os.path.join(out, f"{name}.svg"), svg)
    sys.stdout.write(result.report())
    return 0


def cmd_replay(args):
    with stage("load"):
        with open(args.artifact, encoding="utf-8") as fh:
            original = fh.read()
        artifact = loads_artifact(original)
    result = replay(artifact, args.embeddings)
    out = _mkdir(args.out)
    name = _stem(args.artifact)
    if name.endswith(".run"):
        name = name[: -len(".run")]
    paths = write_run(out, name, result)
    same = result.artifact_json() == original
    print(f"{paths['artifact']}\t{'identical' if same else 'DIFFERS'}")
    if args.check and not same:
        return 1
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "tag": cmd_tag,
    "pipeline": cmd_pipeline,
    "sweep": cmd_sweep,
    "latents": cmd_latents,
    "replay": cmd_replay,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"episum: error in stage {exc}", file=sys.stderr)
        return 1
    except (EpisumError, ValueError, KeyError, OSError) as exc:
        print(f"episum: error: {exc}", file=sys.stderr)
        return 1
