import subprocess
import sys

import numpy as np
import pytest

from stegsage.cli import main
from stegsage.corpus import MANIFEST_NAME, read_manifest
from stegsage.training import read_embeddings


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen-data", "--streams", "10", "--frames", "12", "--rate", "1.0", "--seed", "3",
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(corpus_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    cfg = d / "train.cfg"
    cfg.write_text("epochs=2\nhidden=8\nK=2\nbatch=8\n")
    ck = d / "model.sage"
    assert main(["train", "--manifest", str(corpus_dir), "--config", str(cfg), "--out-checkpoint", str(ck)]) == 0
    return ck


def test_gen_data_layout(corpus_dir):
    m = read_manifest(corpus_dir / MANIFEST_NAME)
    assert len(m.entries) == 20
    assert (corpus_dir / "codebooks.cbk").exists() and (corpus_dir / "source.cfg").exists()


def test_split_command(corpus_dir, capsys):
    assert main(["split", "--corpus", str(corpus_dir), "--split-seed", "1"]) == 0
    assert "train 14, val 4, test 2" in capsys.readouterr().out
    m = read_manifest(corpus_dir / "splits.tsv")
    assert {e.split for e in m.entries} == {"train", "val", "test"}


def test_train_writes_both_checkpoints(checkpoint):
    assert checkpoint.exists()
    assert checkpoint.with_name(checkpoint.name + ".final").exists()


def test_eval_detect_export(corpus_dir, checkpoint, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(checkpoint), "--manifest", str(corpus_dir)]) == 0
    assert "TP=" in capsys.readouterr().out
    assert main(["detect", "--checkpoint", str(checkpoint), "--qis", str(corpus_dir / "stego_00000.qis")]) == 0
    label, prob = capsys.readouterr().out.split()
    assert label in ("cover", "stego") and 0.0 <= float(prob) <= 1.0
    out = tmp_path / "z.txt"
    assert main(["export-embeddings", "--checkpoint", str(checkpoint), "--manifest", str(corpus_dir),
                 "--split", "train", "--out", str(out)]) == 0
    labels, z = read_embeddings(out)
    assert z.shape == (14, 8) and sorted(np.bincount(labels)) == [7, 7]


def test_embed_adds_stego(tmp_path):
    out = tmp_path / "c"
    assert main(["gen-data", "--streams", "4", "--frames", "10", "--rate", "0", "--out", str(out)]) == 0
    assert {e.label for e in read_manifest(out / MANIFEST_NAME).entries} == {"cover"}
    assert main(["embed", "--corpus", str(out), "--rate", "0.4"]) == 0
    m = read_manifest(out / MANIFEST_NAME)
    assert sum(e.label == "stego" for e in m.entries) == 4
    assert {e.rate for e in m.entries if e.label == "stego"} == {0.4}


def test_bench_and_rate_report(capsys):
    assert main(["bench", "--lengths", "5,20", "--runs", "30"]) == 0
    assert "paper reference" in capsys.readouterr().out
    assert main(["rate-report", "--rates", "0,1", "--streams", "5", "--frames", "20"]) == 0
    assert "c3" in capsys.readouterr().out


def test_show_config(capsys):
    assert main(["show-config"]) == 0
    out = capsys.readouterr().out
    assert "lr=0.003" in out and "batch=32" in out and "epochs=150" in out and "dropout=0.3" in out


def test_exit_codes(corpus_dir, checkpoint, tmp_path):
    assert main(["bench", "--lengths", "5,20", "--runs", "3"]) == 2
    assert main(["detect", "--checkpoint", str(tmp_path / "missing.sage"), "--qis", "x.qis"]) == 3
    bad = tmp_path / "bad.qis"
    bad.write_bytes(b"nope")
    assert main(["detect", "--checkpoint", str(checkpoint), "--qis", str(bad)]) == 3
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lr=-1\n")
    assert main(["train", "--manifest", str(corpus_dir), "--config", str(cfg),
                 "--out-checkpoint", str(tmp_path / "m")]) == 2
    assert main(["eval", "--checkpoint", str(checkpoint), "--manifest", str(tmp_path / "nothing.tsv")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(corpus_dir, tmp_path):
    cfg = tmp_path / "wild.cfg"
    cfg.write_text("epochs=3\nhidden=4\nK=1\nlr=1e300\n")
    code = main(["train", "--manifest", str(corpus_dir), "--config", str(cfg), "--out-checkpoint",
                 str(tmp_path / "m")])
    assert code == 4


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "stegsage.cli", "show-config"], capture_output=True, text=True)
    assert r.returncode == 0 and "hidden=64" in r.stdout
    r = subprocess.run([sys.executable, "-m", "stegsage.cli", "gen-data"], capture_output=True, text=True)
    assert r.returncode == 2
