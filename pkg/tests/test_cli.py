import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mvclab import networks as nets
from mvclab.cli import main
from mvclab.data import load_viewset, normalize_minmax


def run(*argv):
    return main([str(a) for a in argv])


def run_dir(out):
    (d,) = [p for p in out.iterdir() if p.is_dir()]
    return d


@pytest.fixture
def smoke_cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preset": "smoke", "batch_size": 32}))
    return path


def test_synth_shapes_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("synth", "--out", out, "--clusters", 3, "--per-cluster", 100,
                   "--dims", "10,15", "--seed", 4) == 0
    vs = load_viewset(a)
    assert [v.shape for v in vs.views] == [(300, 10), (300, 15)]
    for name in ("view0.csv", "view1.csv", "labels.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_synth_single_view_is_usage_error(tmp_path, capsys):
    assert run("synth", "--out", tmp_path, "--dims", "10") == 2


def test_bad_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        run("train", "--variant", "nope")
    assert exc.value.code == 2


def test_train_smoke(tmp_path, smoke_cfg, capsys):
    out = tmp_path / "runs"
    assert run("train", "--data", "smoke", "--config", smoke_cfg, "--out", out) == 0
    d = run_dir(out)
    for name in ("manifest.json", "losses.csv", "metrics.csv", "labels.csv", "checkpoint.json"):
        assert (d / name).exists()
    assert len((d / "metrics.csv").read_text().splitlines()) > 1
    assert d.name.endswith("-seed0")
    summary = json.loads(capsys.readouterr().out)
    assert 0.0 <= summary["acc"] <= 1.0


def test_train_baseline_and_incomplete(tmp_path, smoke_cfg):
    assert run("train", "--data", "smoke", "--config", smoke_cfg, "--variant", "baseline",
               "--out", tmp_path / "a") == 0
    header = (run_dir(tmp_path / "a") / "losses.csv").read_text().splitlines()[0]
    assert header == "epoch,step,clu,rec,total"
    assert run("train", "--data", "smoke", "--config", smoke_cfg, "--incomplete-eta", 0.5,
               "--out", tmp_path / "b") == 0
    header = (run_dir(tmp_path / "b") / "losses.csv").read_text().splitlines()[0]
    assert "pre" in header.split(",")


def test_train_multiview(tmp_path, smoke_cfg):
    data = tmp_path / "v3"
    run("synth", "--out", data, "--per-cluster", 10, "--dims", "6,7,8")
    assert run("train", "--data", data, "--config", smoke_cfg, "--variant", "mcmvc-plus-plus",
               "--out", tmp_path / "r") == 0
    manifest = json.loads((run_dir(tmp_path / "r") / "manifest.json").read_text())
    assert [s["stage"] for s in manifest["stages"]] == ["pretrain", "contrast", "kmeans", "match",
                                                        "finetune", "fuse"]


def test_train_unknown_preset_and_missing_data(tmp_path):
    assert run("train", "--data", "smoke", "--config", "no-such-preset", "--out", tmp_path) == 2
    assert run("train", "--data", tmp_path / "missing", "--config", "smoke",
               "--out", tmp_path) == 1


def test_train_is_byte_deterministic_and_replayable(tmp_path, smoke_cfg):
    for out in ("a", "b"):
        assert run("train", "--data", "smoke", "--config", smoke_cfg, "--seed", 3,
                   "--out", tmp_path / out) == 0
    da, db = run_dir(tmp_path / "a"), run_dir(tmp_path / "b")
    for name in ("losses.csv", "labels.csv", "metrics.csv"):
        assert (da / name).read_bytes() == (db / name).read_bytes()
    assert run("train", "--replay", da / "manifest.json", "--out", tmp_path / "c") == 0
    assert (run_dir(tmp_path / "c") / "metrics.csv").read_bytes() == (da / "metrics.csv").read_bytes()


def test_score(tmp_path, capsys):
    t = tmp_path / "t.csv"
    p = tmp_path / "p.csv"
    t.write_text("0\n0\n1\n1\n2\n2\n")
    p.write_text("2\n2\n0\n0\n1\n1\n")
    assert run("score", "--pred", p, "--true", t) == 0
    r = json.loads(capsys.readouterr().out)
    assert r == {"acc": 1.0, "nmi": 1.0, "ari": 1.0, "pur": 1.0}
    p.write_text("0\n0\n1\n2\n2\n2\n")
    run("score", "--pred", p, "--true", t)
    assert json.loads(capsys.readouterr().out)["acc"] == pytest.approx(0.833333)
    p.write_text("0\n1\n")
    assert run("score", "--pred", p, "--true", t) == 1


def test_ablate_table(tmp_path, smoke_cfg, capsys):
    out = tmp_path / "ablate.csv"
    assert run("ablate", "--data", "smoke", "--config", smoke_cfg, "--epochs", 1, "--runs", 1,
               "--out", out) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["Baseline", "L_ins", "L_var", "L_cla", "ACC", "NMI", "ARI", "PUR"]
    assert len(rows) == 9
    assert rows[8][:4] == ["x", "x", "x", "x"]


def test_sweep(tmp_path, smoke_cfg):
    out = tmp_path / "sweep.csv"
    assert run("sweep", "--data", "smoke", "--config", smoke_cfg, "--epochs", 1, "--runs", 1,
               "--param", "lambda1", "--values", "0.01,0.1,1,10,100", "--out", out) == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) == 6 and rows[0][0] == "lambda1" and rows[1][0] == "0.01"
    assert run("sweep", "--data", "smoke", "--config", smoke_cfg, "--param", "nope",
               "--values", "1") == 2


def test_export_embeddings(tmp_path, smoke_cfg):
    run("train", "--data", "smoke", "--config", smoke_cfg, "--out", tmp_path / "r")
    ck = run_dir(tmp_path / "r") / "checkpoint.json"
    out = tmp_path / "emb"
    assert run("export-embeddings", "--checkpoint", ck, "--data", "smoke", "--out", out) == 0
    first = (out / "z0.csv").read_bytes()
    z0 = np.loadtxt(out / "z0.csv", delimiter=",")
    model = nets.load_checkpoint(ck)
    vs = normalize_minmax(load_viewset(_smoke_dir()))
    np.testing.assert_array_equal(z0, nets.encode(model, 0, vs.views[0]).data)
    assert z0.shape == (60, model.embed_dim)
    run("export-embeddings", "--checkpoint", ck, "--data", "smoke", "--out", out)
    assert (out / "z0.csv").read_bytes() == first


def _smoke_dir():
    from importlib import resources
    return resources.files("mvclab") / "datasets" / "smoke"


def test_export_mismatch(tmp_path, smoke_cfg):
    run("train", "--data", "smoke", "--config", smoke_cfg, "--out", tmp_path / "r")
    ck = run_dir(tmp_path / "r") / "checkpoint.json"
    other = tmp_path / "other"
    run("synth", "--out", other, "--dims", "8,15", "--per-cluster", 5)
    assert run("export-embeddings", "--checkpoint", ck, "--data", other, "--out", tmp_path) == 1


def test_console_script_entry_point(tmp_path):
    env = {**os.environ, "MVCLAB_THREADS": "1"}
    proc = subprocess.run([sys.executable, "-m", "mvclab.cli", "score", "--pred", "x", "--true",
                           "y"], capture_output=True, text=True, env=env)
    assert proc.returncode == 1
    proc = subprocess.run([sys.executable, "-m", "mvclab.cli"], capture_output=True, text=True)
    assert proc.returncode == 2
