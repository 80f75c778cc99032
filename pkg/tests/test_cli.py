import os
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from episum.cli import main
from episum.embedding import save_embeddings
from episum.pipeline import loads_artifact
from episum.tagging import load_corpus


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_gen_hundred_files_and_repeatable(tmp_path, capsys):
    assert (
        main(["gen", "--env", "four_rooms", "--n", "100", "--seed", "42", "--size", "9", "--out", str(tmp_path / "a")])
        == 0
    )
    files = sorted(os.listdir(tmp_path / "a"))
    assert len(files) == 100 and files[0] == "four_rooms-0000.episode"
    main(
        [
            "--seed",
            "42",
            "gen",
            "--env",
            "four_rooms",
            "--n",
            "100",
            "--size",
            "9",
            "--out",
            str(tmp_path / "b"),
            "--threads",
            "4",
        ]
    )
    for name in files:
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)


def test_bad_env_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["gen", "--env", "mars", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


@pytest.fixture(scope="module")
def episodes(tmp_path_factory):
    out = tmp_path_factory.mktemp("eps")
    assert main(["gen", "--env", "door_key", "--n", "3", "--size", "8", "--out", str(out)]) == 0
    return out


def test_tag_writes_corpora(episodes, tmp_path, capsys):
    src = str(episodes / "door_key-0000.episode")
    assert main(["tag", src, "--out", str(tmp_path)]) == 0
    corpus = load_corpus(tmp_path / "door_key-0000.tags")
    assert len(corpus) > 0
    assert f"{len(corpus)} tags" in capsys.readouterr().out


def test_pipeline_files_and_replay(episodes, tmp_path, capsys):
    src = str(episodes / "door_key-0001.episode")
    assert main(["pipeline", src, "--n-epochs", "80", "--out", str(tmp_path / "run")]) == 0
    stem = tmp_path / "run" / "door_key-0001"
    for ext in (".run.json", ".summary.txt", ".svg", ".report.csv"):
        assert os.path.exists(f"{stem}{ext}")
    ET.fromstring(read(f"{stem}.svg"))
    summary = read(f"{stem}.summary.txt").decode()
    assert summary.startswith("tags=")
    assert read(f"{stem}.report.csv").decode().startswith("input,n_tags,n_clusters")

    assert main(["replay", f"{stem}.run.json", "--check", "--out", str(tmp_path / "again")]) == 0
    assert "identical" in capsys.readouterr().out
    again = tmp_path / "again" / "door_key-0001"
    for ext in (".run.json", ".summary.txt", ".svg"):
        assert read(f"{stem}{ext}") == read(f"{again}{ext}")


def test_pipeline_is_byte_deterministic(episodes, tmp_path):
    srcs = [str(episodes / f"door_key-000{i}.episode") for i in range(3)]
    main(["pipeline", *srcs, "--n-epochs", "60", "--out", str(tmp_path / "a")])
    main(["--threads", "3", "pipeline", *srcs, "--n-epochs", "60", "--out", str(tmp_path / "b")])
    for name in sorted(os.listdir(tmp_path / "a")):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)


def test_replay_check_detects_tampering(episodes, tmp_path, capsys):
    src = str(episodes / "door_key-0002.episode")
    main(["pipeline", src, "--n-epochs", "60", "--out", str(tmp_path)])
    path = tmp_path / "door_key-0002.run.json"
    text = read(path).decode().replace('"labels": [\n  ', '"labels": [\n  7,\n  ', 1)
    path.write_text(text)
    assert main(["replay", str(path), "--check", "--out", str(tmp_path / "r")]) == 1
    assert "DIFFERS" in capsys.readouterr().out


def test_arena_setting_flags_are_honoured(tmp_path, capsys):
    main(
        [
            "gen",
            "--env",
            "arena",
            "--marines",
            "4",
            "--shards",
            "3",
            "--arena-size",
            "20",
            "--length",
            "40",
            "--out",
            str(tmp_path),
        ]
    )
    src = str(tmp_path / "arena-0000.episode")
    args = ["pipeline", src, "--timestamps", "--sum-thresh", "0.7", "--min-cluster-size", "20", "--n-epochs", "60"]
    assert main(args + ["--out", str(tmp_path / "o")]) == 0
    cfg = loads_artifact(read(tmp_path / "o" / "arena-0000.run.json").decode())["config"]
    assert cfg["sum_thresh"] == 0.7 and cfg["min_cluster_size"] == 20 and cfg["timestamps"] is True


def test_config_file_precedence(episodes, tmp_path):
    (tmp_path / "c.cfg").write_text("min_cluster_size=20\nsum_thresh=0.7\n")
    src = str(episodes / "door_key-0000.episode")
    main(
        [
            "--config",
            str(tmp_path / "c.cfg"),
            "pipeline",
            src,
            "--min-cluster-size",
            "15",
            "--n-epochs",
            "40",
            "--out",
            str(tmp_path),
        ]
    )
    cfg = loads_artifact(read(tmp_path / "door_key-0000.run.json").decode())["config"]
    assert cfg["min_cluster_size"] == 15 and cfg["sum_thresh"] == 0.7


def test_unknown_config_key_exits_one(episodes, tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("colour=blue\n")
    src = str(episodes / "door_key-0000.episode")
    assert main(["--config", str(tmp_path / "c.cfg"), "pipeline", src, "--out", str(tmp_path)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_mismatched_embeddings_exit_one(episodes, tmp_path, capsys):
    save_embeddings(np.ones((5, 8)), tmp_path / "ext.vec")
    src = str(episodes / "door_key-0000.episode")
    assert main(["pipeline", src, "--embeddings", str(tmp_path / "ext.vec"), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "error in stage embed" in err and "5 rows" in err


def test_sweep_single_cell(episodes, tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert (
        main(["sweep", str(episodes), "--neighbors", "10", "--mcs", "10", "--n-epochs", "40", "--out", str(out)]) == 0
    )
    rows = out.read_text().splitlines()
    assert rows[0] == "n_neighbors,min_cluster,clustered_pct,sil_score,global_cos_sim,mean"
    assert len(rows) == 2 and rows[1].startswith("10,10,")
    assert os.path.exists(tmp_path / "s.svg")


def test_sweep_empty_directory_exits_one(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["sweep", str(tmp_path / "empty"), "--out", str(tmp_path / "s.csv")]) == 1
    assert "no .episode" in capsys.readouterr().err


def test_sweep_bad_grid_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["sweep", str(tmp_path), "--neighbors", "10,x", "--out", "s.csv"])
    assert info.value.code == 2


def test_latents_synthetic(tmp_path, capsys):
    assert main(["latents", "--synthetic", "--mcs", "5", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "steps=24 clusters=3 clustered=100.0%"
    assert "step=7 " in out and "step=15 " in out
    svg = read(tmp_path / "synthetic-0.svg")
    assert b'id="step-23"' in svg and b'id="centroid-2"' in svg


def test_latents_unclusterable_exits_zero(tmp_path, capsys):
    save_embeddings(np.random.default_rng(3).normal(size=(24, 50)), tmp_path / "diffuse.latents")
    args = ["latents", "--input", str(tmp_path / "diffuse.latents"), "--mcs", "13", "--out", str(tmp_path)]
    assert main(args) == 0
    assert "unclusterable" in (tmp_path / "diffuse.transitions.txt").read_text()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "episum", "latents", "--synthetic", "--dim", "64", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("steps=24")
