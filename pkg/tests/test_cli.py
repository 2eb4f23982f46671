import csv
import math

import numpy as np
import pytest

from regsl import nn
from regsl.cli import main, select_best
from regsl.config import Config, ConfigError, parse_lines
from regsl.noise import read_noise_record

SMALL = """\
# tiny task so every command runs in about a second
run.seed = 3
data.n = 300
data.d = 5
data.num_classes = 3
source.n = 400
model.hidden = [12]
pretrain.epochs = 4
train.epochs = 3
noise.rate = 0.4
selflabel.correction_start_epoch = 1
selflabel.reweight_start_epoch = 1
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def run(*args):
    return main([str(a) for a in args])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(path):
    return {(r["metric"], r["sigma"]): r for r in rows(path)}


# -- config ------------------------------------------------------------------

def test_config_parsing():
    cfg = Config.from_text("model.hidden = [4, 5]  # two layers\nconstraint.radii = [1, inf]\n"
                           "train.lr_decay = true\ndata.source = 'blobs'\n")
    assert cfg["model.hidden"] == (4, 5)
    assert cfg["constraint.radii"] == (1.0, math.inf)
    assert cfg["train.lr_decay"] is True
    assert cfg["data.source"] == "blobs"
    assert cfg["train.epochs"] == 40  # default


def test_config_round_trip():
    cfg = Config.from_text(SMALL + "constraint.radii = [0.5, 0.25]\n")
    again = Config.from_text(cfg.dumps())
    assert dict(again) == dict(cfg)


@pytest.mark.parametrize("text, field", [
    ("train.epochs = -1", "train.epochs"),
    ("train.mode = adam", "train.mode"),
    ("trian.epochs = 3", "trian.epochs"),
    ("selflabel.temperature = 0", "selflabel.temperature"),
    ("model.hidden = 4, 5]", "model.hidden"),
    ("train.epochs = 3\ntrain.epochs = 4", "train.epochs"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        Config.from_text(text)


def test_missing_config_file(tmp_path, capsys):
    assert run("train", "--config", tmp_path / "nope.cfg", "--out", tmp_path / "o") == 2
    assert "--config" in capsys.readouterr().err


def test_missing_data_file(tmp_path, cfg_path, capsys):
    code = run("pretrain", "--config", cfg_path, "--out", tmp_path / "o",
               "--set", "source.source=csv", "--set", f"source.path={tmp_path / 'none.csv'}")
    assert code == 2
    assert "source.path" in capsys.readouterr().err


def test_bad_override(tmp_path, cfg_path, capsys):
    assert run("train", "--config", cfg_path, "--out", tmp_path / "o", "--set", "train.epochs=x") == 2
    assert "train.epochs" in capsys.readouterr().err


def test_batch_larger_than_data(tmp_path, cfg_path, capsys):
    assert run("train", "--config", cfg_path, "--out", tmp_path / "o", "--set", "train.batch_size=5000") == 2
    assert "train.batch_size" in capsys.readouterr().err


# -- pretrain / inject-noise ---------------------------------------------------

def test_pretrain_snapshot_reloads_and_repeats(tmp_path, cfg_path):
    assert run("pretrain", "--config", cfg_path, "--out", tmp_path / "a") == 0
    assert run("pretrain", "--config", cfg_path, "--out", tmp_path / "b") == 0
    end = tmp_path / "a" / "weights" / "end.txt"
    net = nn.load_snapshot(end)
    assert net.widths == [5, 12, 3]
    assert end.read_bytes() == (tmp_path / "b" / "weights" / "end.txt").read_bytes()
    assert (tmp_path / "a" / "figures" / "training.png").stat().st_size > 0
    assert (tmp_path / "a" / "config.txt").exists()


def test_inject_noise_rate_zero(tmp_path, cfg_path):
    assert run("inject-noise", "--config", cfg_path, "--out", tmp_path, "--rate", 0) == 0
    header, true, noisy = read_noise_record(tmp_path / "data.noise.csv")
    assert np.array_equal(true, noisy)
    assert float(header["realized_rate"]) == 0.0


def test_inject_noise_rate_point_four(tmp_path, cfg_path):
    assert run("inject-noise", "--config", cfg_path, "--out", tmp_path,
               "--set", "data.n=1000", "--set", "data.num_classes=10", "--rate", 0.4) == 0
    header, true, noisy = read_noise_record(tmp_path / "data.noise.csv")
    assert len(true) == 1000
    assert 0.35 <= float(header["realized_rate"]) <= 0.45
    assert float(header["realized_rate"]) == np.mean(true != noisy)


def test_inject_correlated_reports_rate(tmp_path, cfg_path):
    assert run("inject-noise", "--config", cfg_path, "--out", tmp_path, "--mode", "correlated",
               "--set", "noise.holdout_n=300", "--set", "noise.aux_hidden=[8]") == 0
    header, true, noisy = read_noise_record(tmp_path / "data.noise.csv")
    assert header["mode"] == "correlated"
    assert float(header["realized_rate"]) == np.mean(true != noisy)
    assert "aux_accuracy" in header


# -- train ---------------------------------------------------------------------------

def test_vanilla_matches_unconstrained_regsl(tmp_path, cfg_path):
    assert run("train", "--config", cfg_path, "--out", tmp_path / "v", "--mode", "vanilla") == 0
    assert run("train", "--config", cfg_path, "--out", tmp_path / "r", "--mode", "regsl",
               "--set", "constraint.radii=[inf, inf]", "--no-correction", "--no-reweight") == 0
    assert (tmp_path / "v" / "metrics.csv").read_bytes() == (tmp_path / "r" / "metrics.csv").read_bytes()
    assert (tmp_path / "v" / "weights" / "end.txt").read_bytes() == \
        (tmp_path / "r" / "weights" / "end.txt").read_bytes()


def test_regsl_respects_schedule(tmp_path, cfg_path):
    out = tmp_path / "r"
    assert run("train", "--config", cfg_path, "--out", out, "--set", "constraint.base_d=0.05",
               "--set", "constraint.gamma=2") == 0
    last = rows(out / "metrics.csv")[-1]
    assert float(last["layer_distance_0"]) <= 0.05 + 1e-9
    assert float(last["layer_distance_1"]) <= 0.1 + 1e-9
    for name in ("training.png", "distances.png", "selflabel.png"):
        assert (out / "figures" / name).stat().st_size > 0


def test_ablation_flags_are_echoed(tmp_path, cfg_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    dirs = []
    for flag in ("--no-correction", "--no-reweight", "--no-regularization"):
        assert run("train", "--config", cfg_path, flag) == 0
        d = tmp_path / "runs" / f"train-regsl-{flag[2:]}"
        text = (d / "config.txt").read_text()
        assert f"# ablations: {flag[2:]}" in text
        dirs.append(d)
    assert "selflabel.correct = false" in (dirs[0] / "config.txt").read_text()
    assert "selflabel.reweight = false" in (dirs[1] / "config.txt").read_text()
    assert "constraint.enabled = false" in (dirs[2] / "config.txt").read_text()
    assert len({(d / "metrics.csv").read_bytes() for d in dirs}) == 3


def test_rerun_from_snapshot_is_bit_exact(tmp_path, cfg_path):
    assert run("train", "--config", cfg_path, "--out", tmp_path / "a", "--seed", 11) == 0
    assert run("train", "--config", tmp_path / "a" / "config.txt", "--out", tmp_path / "b") == 0
    for name in ("metrics.csv", "weights/start.txt", "weights/end.txt", "noise.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_from_injected_record(tmp_path, cfg_path):
    assert run("inject-noise", "--config", cfg_path, "--out", tmp_path / "n") == 0
    code = run("train", "--config", cfg_path, "--out", tmp_path / "t",
               "--set", "data.source=csv", "--set", f"data.path={tmp_path / 'n' / 'data.csv'}",
               "--set", "noise.mode=record", "--set", f"noise.record={tmp_path / 'n' / 'data.noise.csv'}",
               "--set", "source.source=csv", "--set", f"source.path={tmp_path / 'n' / 'data.csv'}")
    assert code == 0
    _, _, recorded = read_noise_record(tmp_path / "n" / "data.noise.csv")
    _, _, used = read_noise_record(tmp_path / "t" / "noise.csv")
    assert np.array_equal(recorded, used)


def test_divergence_exit_code(tmp_path, cfg_path, capsys):
    with np.errstate(all="ignore"):
        code = run("train", "--config", cfg_path, "--out", tmp_path / "d", "--mode", "vanilla",
                   "--set", "train.learning_rate=1e300")
    assert code == 1
    assert "step" in capsys.readouterr().err


# -- diagnose ---------------------------------------------------------------------------

def test_diagnose_self_is_zero(tmp_path, cfg_path):
    assert run("pretrain", "--config", cfg_path, "--out", tmp_path / "p") == 0
    snap = tmp_path / "p" / "weights" / "end.txt"
    assert run("diagnose", "--config", cfg_path, "--out", tmp_path / "d", "--snapshot", snap,
               "--anchor", snap) == 0
    rep = report(tmp_path / "d" / "report.csv")
    assert float(rep[("layer_distance_0", "")]["value"]) == 0.0
    for sigma in ("0.01", "0.001", "0.0001"):
        assert float(rep[("kl", sigma)]["value"]) == 0.0
        assert rep[("perturbed_loss", sigma)]["stderr"] != ""
        assert ("perturbation_radius", sigma) in rep


def test_diagnose_bound_row(tmp_path, cfg_path):
    assert run("train", "--config", cfg_path, "--out", tmp_path / "t") == 0
    w = tmp_path / "t" / "weights"
    assert run("diagnose", "--config", cfg_path, "--out", tmp_path / "d", "--snapshot", w / "end.txt",
               "--anchor", w / "start.txt") == 0
    rep = report(tmp_path / "d" / "report.csv")
    bound = float(rep[("bound", "")]["value"])
    assert bound >= float(rep[("train_loss", "")]["value"]) + float(rep[("bound.eps", "")]["value"])
    assert float(rep[("bound.D_1", "")]["value"]) == float(rep[("layer_distance_1", "")]["value"])
    assert (tmp_path / "d" / "figures" / "perturbed_loss.png").exists()


def test_diagnose_needs_snapshot(tmp_path, cfg_path, capsys):
    assert run("diagnose", "--config", cfg_path, "--out", tmp_path / "d") == 2
    assert "diagnose.snapshot" in capsys.readouterr().err


# -- grid ---------------------------------------------------------------------------------

def test_one_point_grid_matches_train(tmp_path, cfg_path):
    grid = tmp_path / "g.txt"
    grid.write_text("constraint.base_d = [0.5]\n")
    assert run("grid", "--config", cfg_path, "--out", tmp_path / "g", "--grid", grid) == 0
    assert run("train", "--config", cfg_path, "--out", tmp_path / "t", "--set", "constraint.base_d=0.5") == 0
    assert (tmp_path / "g" / "point_000" / "metrics.csv").read_bytes() == \
        (tmp_path / "t" / "metrics.csv").read_bytes()
    summary = rows(tmp_path / "g" / "summary.csv")
    assert len(summary) == 1 and summary[0]["selected"] == "1"


def test_two_by_two_grid(tmp_path, cfg_path):
    grid = tmp_path / "g.txt"
    grid.write_text("constraint.base_d = [0.1, 1.0]\nselflabel.temperature = [1.0, 2.0]\n")
    assert run("grid", "--config", cfg_path, "--out", tmp_path / "g", "--grid", grid) == 0
    summary = rows(tmp_path / "g" / "summary.csv")
    assert len(summary) == 4
    assert sorted(p.name for p in (tmp_path / "g").glob("point_*")) == [f"point_00{i}" for i in range(4)]
    best = [r for r in summary if r["selected"] == "1"]
    assert len(best) == 1
    assert float(best[0]["final_val_accuracy"]) == max(float(r["final_val_accuracy"]) for r in summary)
    assert (tmp_path / "g" / "figures" / "grid.png").exists()


def test_grid_selection_tie_break():
    results = [{"label": "b=2", "val": 0.8}, {"label": "b=1", "val": 0.8},
               {"label": "a=9", "val": 0.7}, {"label": "a=0", "val": None}]
    assert select_best(results) == 1
    assert select_best([{"label": "x", "val": None}]) is None


def test_grid_rejects_unknown_key(tmp_path, cfg_path, capsys):
    grid = tmp_path / "g.txt"
    grid.write_text("constraint.radius = [1, 2]\n")
    assert run("grid", "--config", cfg_path, "--out", tmp_path / "g", "--grid", grid) == 2
    assert "constraint.radius" in capsys.readouterr().err


def test_parse_lines_keeps_lists():
    assert parse_lines("a.b = [1, 2]\nc.d = x") == {"a.b": ["1", "2"], "c.d": "x"}
