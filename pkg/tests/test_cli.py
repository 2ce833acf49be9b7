import subprocess
import sys

import numpy as np
import pytest

from hypergcn.cli import main
from hypergcn.data import NTU25, SkeletonSequence, write_sequence, write_synthetic_dataset
from hypergcn.network import HyperGCN, ModelConfig, save_checkpoint

RUN_CFG = """\
manifest = data/manifest.tsv
num_classes = 2
layout = toy5
V_h = 2
T_in = 8
stage_channels = 16,32,32
k_scales = 2,3,4,5,6,7,3,5
max_persons = 1
total_epochs = 30
warmup_epochs = 5
step_epochs = 20
step_factors = 0.1
batch_size = 4
seed = 7
"""


def parse(out):
    return dict(line.split("=", 1) for line in out.strip().splitlines() if "=" in line)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    write_synthetic_dataset(root / "data", n=8, num_classes=2, val_fraction=0.25)
    (root / "run.cfg").write_text(RUN_CFG)
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "out"
    assert main(["train", str(workspace / "run.cfg"), "--out", str(out)]) == 0
    return out


def test_train_outputs(trained, capsys):
    lines = (trained / "metrics.tsv").read_text().splitlines()
    assert lines[0] == "epoch\tlr\ttrain_loss\ttrain_acc\tval_acc"
    assert len(lines) == 31
    assert [l.split("\t")[0] for l in lines[1:]] == [str(e) for e in range(30)]
    for name in ("final.ckpt", "best.ckpt", "config.txt", "summary.txt"):
        assert (trained / name).is_file()
    summary = parse((trained / "summary.txt").read_text())
    assert summary["epochs"] == "30" and summary["steps"] == "60"


def test_rerun_is_identical(workspace, trained, capsys):
    again = workspace / "again"
    assert main(["train", str(workspace / "run.cfg"), "--out", str(again)]) == 0
    assert (again / "metrics.tsv").read_bytes() == (trained / "metrics.tsv").read_bytes()
    assert (again / "final.ckpt").read_bytes() == (trained / "final.ckpt").read_bytes()


def test_seed_override_changes_run(workspace, trained, monkeypatch, capsys):
    monkeypatch.setenv("HGCN_SEED", "11")
    monkeypatch.setenv("HGCN_THREADS", "1")
    other = workspace / "seed11"
    assert main(["train", str(workspace / "run.cfg"), "--out", str(other)]) == 0
    assert (other / "metrics.tsv").read_bytes() != (trained / "metrics.tsv").read_bytes()
    assert "seed=11" in (other / "config.txt").read_text()


def test_eval_and_scores(workspace, trained, capsys):
    scores = workspace / "joint.tsv"
    code = main(["eval", str(trained / "final.ckpt"), str(workspace / "data/manifest.tsv"),
                 "--scores", str(scores)])
    out = parse(capsys.readouterr().out)
    assert code == 0
    assert out["top1"] == "1.0000" and out["samples"] == "8"
    rows = scores.read_text().splitlines()
    assert len(rows) == 8


def test_ensemble(workspace, trained, capsys):
    scores = workspace / "joint.tsv"
    if not scores.exists():
        main(["eval", str(trained / "final.ckpt"), str(workspace / "data/manifest.tsv"),
              "--scores", str(scores)])
    capsys.readouterr()
    assert main(["ensemble", str(scores)]) == 0
    single = parse(capsys.readouterr().out)
    assert main(["ensemble", str(scores), str(scores), "--weights", "0.3,2"]) == 0
    double = parse(capsys.readouterr().out)
    assert single["top1"] == double["top1"] == "1.0000"
    assert double["streams"] == "2"


def test_ensemble_shape_mismatch(tmp_path, capsys):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    a.write_text("0\t0.1\t0.2\n1\t0.3\t0.1\n")
    b.write_text("0\t0.1\t0.2\t0.0\n1\t0.3\t0.1\t0.0\n")
    assert main(["ensemble", str(a), str(b)]) == 2


def test_ensemble_matches_enumeration(tmp_path, capsys):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    # stream a prefers class 0 mildly, stream b prefers class 2 strongly
    a.write_text("0\t1.0\t0.0\t0.0\n")
    b.write_text("0\t0.0\t0.0\t3.0\n")
    main(["ensemble", str(a), str(b)])
    assert parse(capsys.readouterr().out)["top1"] == "0.0000"
    main(["ensemble", str(a), str(b), "--weights", "10,1"])
    assert parse(capsys.readouterr().out)["top1"] == "1.0000"


def test_exit_codes(workspace, tmp_path, capsys):
    assert main(["train", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 2
    assert "missing.cfg" in capsys.readouterr().err
    assert main(["eval", str(tmp_path / "none.ckpt"), str(workspace / "data/manifest.tsv")]) == 2
    assert main(["bogus"]) == 2
    # a manifest pointing at an absent sequence is a data error
    (tmp_path / "data").mkdir()
    (tmp_path / "data/manifest.tsv").write_text("gone.skl\t0\ttrain\n")
    (tmp_path / "run.cfg").write_text(RUN_CFG)
    assert main(["train", str(tmp_path / "run.cfg"), "--out", str(tmp_path / "o")]) == 3


def test_non_finite_loss_exit_code(workspace, tmp_path, capsys):
    cfg = RUN_CFG.replace("manifest = data/manifest.tsv",
                          f"manifest = {workspace / 'data/manifest.tsv'}")
    cfg += "base_lr = 1e300\nclip_norm = 0\n"
    (tmp_path / "boom.cfg").write_text(cfg)
    with np.errstate(all="ignore"):
        assert main(["train", str(tmp_path / "boom.cfg"), "--out", str(tmp_path / "o")]) == 4


def test_flops_default(capsys):
    assert main(["flops"]) == 0
    out = parse(capsys.readouterr().out)
    assert abs(int(out["flops"]) - 1.62e9) <= 0.25 * 1.62e9
    assert 0.85e6 <= int(out["params"]) <= 1.15e6
    assert int(out["flops"]) == int(out["flops_per_frame_part"]) + int(out["flops_fixed_part"])


def test_gradcheck_linear(capsys):
    assert main(["gradcheck", "--linear", "--max-per-tensor", "1"]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == "PASS"


def test_export_graph(tmp_path, capsys):
    cfg = ModelConfig(num_classes=4, stage_channels=(16, 32, 32), T_in=16, max_persons=2)
    save_checkpoint(tmp_path / "m.ckpt", HyperGCN(cfg))
    rng = np.random.default_rng(0)
    write_sequence(tmp_path / "s.skl",
                   SkeletonSequence(rng.standard_normal((2, 20, 25, 3)).astype(np.float32), 1))
    out = tmp_path / "graphs"
    assert main(["export-graph", str(tmp_path / "m.ckpt"), str(tmp_path / "s.skl"), str(out)]) == 0
    info = parse(capsys.readouterr().out)
    assert info["graphs"] == "72" and info["vertices"] == "28"
    incid = sorted(out.glob("*_incidence.csv"))
    assert len(incid) == 72
    for f in incid[:5]:
        H = np.loadtxt(f, delimiter=",")
        assert H.shape == (28, 28)
        np.testing.assert_allclose(H.sum(axis=1), 1, atol=1e-6)
    w = np.loadtxt(out / "layer0_branch0_edge_weights.csv", delimiter=",", ndmin=2)
    assert w.shape == (1, 28)


def test_export_rejects_wrong_layout(tmp_path, capsys):
    save_checkpoint(tmp_path / "m.ckpt", HyperGCN(ModelConfig.tiny()))
    write_sequence(tmp_path / "s.skl", SkeletonSequence(np.zeros((1, 4, 25, 3), np.float32), 0))
    assert main(["export-graph", str(tmp_path / "m.ckpt"), str(tmp_path / "s.skl"),
                 str(tmp_path / "g")]) == 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hypergcn", "flops", "--frames", "128"],
                         capture_output=True, text=True, check=True)
    out = parse(res.stdout)
    assert out["frames"] == "128"
