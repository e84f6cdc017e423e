import json
import struct
import subprocess
import sys

import numpy as np
import pytest

from shortcut_mcmc.checkpoint import Checkpoint
from shortcut_mcmc.cli import FIG_KS, main
from shortcut_mcmc.data import load_points

TINY = ["--T", "20", "--K", "4", "--hidden-dim", "16", "--epochs", "3",
        "--eval-every", "2", "--eval-n", "32", "--checkpoint-every", "1"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def swirl(tmp_path):
    path = tmp_path / "swirl.csv"
    assert run("gen-data", "--n", 64, "--seed", 2, "--out", path) == 0
    return path


@pytest.fixture
def trained(tmp_path, swirl):
    out = tmp_path / "run"
    assert run("train", "--data", swirl, "--out-dir", out, *TINY) == 0
    return out


def test_gen_data(swirl):
    ps = load_points(swirl)
    assert ps.points.shape == (64, 2)
    assert ps.generator == "swirl" and ps.seed == 2
    assert abs(ps.points.mean(axis=0)).max() < 1e-9


def test_gen_data_rejects_empty(tmp_path, capsys):
    assert run("gen-data", "--n", 0, "--out", tmp_path / "x.csv") == 2
    assert "--n" in capsys.readouterr().err


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("gen-data", "--n", 50, "--seed", 9, "--out", a)
    run("gen-data", "--n", 50, "--seed", 9, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"final.ckpt", "last.ckpt", "train_log.csv", "train_timing.csv", "run_config.json"} <= names
    ck = Checkpoint.load(trained / "final.ckpt")
    assert ck.epoch == 3 and ck.train_config.K == 4 and ck.net_config.hidden_dim == 16
    lines = (trained / "train_log.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0].startswith("epoch,eps_loss,fidelity_loss")


def test_train_is_byte_reproducible(tmp_path, swirl):
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        run("train", "--data", swirl, "--out-dir", out, *TINY)
        outs.append(out)
    for f in ("final.ckpt", "train_log.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_train_resume_appends_log(tmp_path, swirl):
    # Stop on an evaluation epoch: the last epoch of a run is always evaluated.
    part, full = tmp_path / "part", tmp_path / "full"
    run("train", "--data", swirl, "--out-dir", part, *TINY, "--epochs", 4)
    run("train", "--data", swirl, "--out-dir", full, *TINY, "--epochs", 6)
    assert run("train", "--data", swirl, "--out-dir", part, "--resume", part / "final.ckpt",
               "--epochs", 6) == 0
    assert (part / "final.ckpt").read_bytes() == (full / "final.ckpt").read_bytes()
    assert (part / "train_log.csv").read_bytes() == (full / "train_log.csv").read_bytes()
    assert len((part / "train_timing.csv").read_text().splitlines()) == 7


def test_config_file_precedence(tmp_path, swirl):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"K": 5, "epochs": 2, "T": 20, "hidden_dim": 8, "eval_every": 0, "lr": 5e-4}))
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--data", swirl, "--out-dir", out, "--K", 3) == 0
    rc = json.loads((out / "run_config.json").read_text())
    assert rc["K"] == 3 and rc["lr"] == 5e-4 and rc["epochs"] == 2


def test_config_file_unknown_key(tmp_path, swirl):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kk": 1}))
    assert run("train", "--config", cfg, "--data", swirl) == 2


def test_config_file_bad_json(tmp_path, swirl):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert run("train", "--config", cfg, "--data", swirl) == 3


def test_train_invalid_K(tmp_path, swirl):
    assert run("train", "--data", swirl, "--out-dir", tmp_path / "r", "--T", 20, "--K", 30) == 2


def test_train_missing_data(tmp_path):
    assert run("train", "--data", tmp_path / "nope.csv", "--out-dir", tmp_path / "r", *TINY) == 3


def test_sample_and_eval(tmp_path, trained, swirl, capsys):
    out = tmp_path / "gen.csv"
    assert run("sample", "--checkpoint", trained / "final.ckpt", "--n", 40, "--out", out) == 0
    assert load_points(out).points.shape == (40, 2)
    rep = tmp_path / "rep.json"
    capsys.readouterr()
    assert run("eval", out, swirl, "--sampler", "shortcut", "--out", rep) == 0
    printed = json.loads(capsys.readouterr().out)
    saved = json.loads(rep.read_text())
    assert printed == saved
    assert saved["energy_distance"] >= 0 and saved["chamfer"] >= 0 and saved["sampler"] == "shortcut"


def test_sample_deterministic(tmp_path, trained):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        run("sample", "--checkpoint", trained / "final.ckpt", "--n", 30, "--seed", 4, "--out", p)
    assert a.read_bytes() == b.read_bytes()


def test_sample_shortcut_snapshots(tmp_path, trained):
    snaps = tmp_path / "snaps"
    run("sample", "--checkpoint", trained / "final.ckpt", "--n", 20, "--steps", 4,
        "--out", tmp_path / "s.csv", "--snapshots-dir", snaps)
    assert sorted(p.name for p in snaps.iterdir()) == [f"snap_shortcut_{k}.csv" for k in range(5)]
    final = load_points(snaps / "snap_shortcut_4.csv").points
    assert np.array_equal(final, load_points(tmp_path / "s.csv").points)


def test_sample_full_snapshots(tmp_path, trained):
    snaps = tmp_path / "snaps"
    assert run("sample", "--checkpoint", trained / "final.ckpt", "--n", 10, "--steps", "full",
               "--out", tmp_path / "s.csv", "--snapshots-dir", snaps, "--snapshot-ks", "0,5,20") == 0
    assert sorted(p.name for p in snaps.iterdir()) == ["snap_full_0.csv", "snap_full_20.csv", "snap_full_5.csv"]


@pytest.mark.parametrize("steps", ["0", "21", "ten"])
def test_sample_bad_steps(tmp_path, trained, steps):
    assert run("sample", "--checkpoint", trained / "final.ckpt", "--steps", steps,
               "--out", tmp_path / "s.csv") == 2


def test_sample_bad_checkpoint_version(tmp_path, trained, capsys):
    raw = bytearray((trained / "final.ckpt").read_bytes())
    struct.pack_into("<I", raw, 4, 99)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    assert run("sample", "--checkpoint", bad, "--out", tmp_path / "s.csv") == 3
    assert "version" in capsys.readouterr().err


def test_sample_truncated_checkpoint(tmp_path, trained):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes((trained / "final.ckpt").read_bytes()[:100])
    assert run("sample", "--checkpoint", bad, "--out", tmp_path / "s.csv") == 3


def test_sample_missing_checkpoint(tmp_path):
    assert run("sample", "--checkpoint", tmp_path / "missing.ckpt") == 3


def test_eval_bad_csv(tmp_path, swirl, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1.0,2.0\n3.0\n")
    assert run("eval", bad, swirl) == 3
    assert "bad.csv:3:" in capsys.readouterr().err


def test_plot_grid(tmp_path, swirl):
    out = tmp_path / "g.svg"
    assert run("plot", swirl, swirl, swirl, swirl, "--grid", 2, 2, "--out", out,
               "--row-labels", "a", "b", "--col-labels", "k=1", "k=2") == 0
    text = out.read_text()
    assert text.startswith("<svg") or text.startswith("<?xml")
    assert text.count("<circle") == 4 * 64


def test_plot_grid_mismatch(tmp_path, swirl):
    assert run("plot", swirl, swirl, "--grid", 2, 2, "--out", tmp_path / "g.svg") == 2


def test_figure_ks_cover_full_chain():
    assert FIG_KS[-1] == 200 and list(FIG_KS) == sorted(FIG_KS)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "shortcut_mcmc", "gen-data", "--n", "5",
                          "--out", str(tmp_path / "p.csv")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert load_points(tmp_path / "p.csv").points.shape == (5, 2)
