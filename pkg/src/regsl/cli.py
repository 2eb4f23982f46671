"""Command-line entry point: ``regsl <command> [--config FILE] [--out DIR] [--seed N]``.

Commands
    pretrain      train the source network and save its weights
    inject-noise  write the target data and a noise record
    train         fine-tune (vanilla or regsl), writing metrics, weights and figures
    diagnose      distances, KL, perturbed loss and the generalization bound
    grid          run ``train`` over a grid of settings and pick the best by validation accuracy

Exit status is 0 on success, 1 on divergence or another runtime failure and
2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import sys
from pathlib import Path

from . import diagnostics as diag
from . import nn, pipeline, plotting
from .config import Config, ConfigError, convert, format_value, parse_assignment, parse_lines
from .constraint import DegenerateAnchorError, distance_ratios, layer_distances
from .data import save_csv
from .noise import write_noise_record
from .seeding import derive_seed
from .trainer import (DivergenceError, finetune_regsl, finetune_vanilla, pretrain_with_history,
                      write_metrics_csv)

ABLATIONS = {
    "no_correction": ("selflabel.correct", "false"),
    "no_reweight": ("selflabel.reweight", "false"),
    "no_regularization": ("constraint.enabled", "false"),
}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _write_rows(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def write_snapshot_config(cfg: Config, out: Path, notes=()) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    text = "".join(f"# {n}\n" for n in notes) + cfg.dumps()
    path = out / "config.txt"
    path.write_text(text)
    return path


# -- commands ------------------------------------------------------------------

def cmd_pretrain(cfg: Config, out: Path) -> int:
    target = pipeline.load_target(cfg)
    source = pipeline.load_source(cfg, target)
    widths = pipeline.widths(cfg, target.features.shape[1], target.num_classes)
    pcfg = pipeline.pretrain_config(cfg, len(source))
    init = nn.init_network(widths, cfg["model.activation"], derive_seed(pcfg.seed, "init"))
    nn.save_snapshot(init, out / "weights" / "start.txt")
    net, history = pretrain_with_history(source, widths, pcfg, activation=cfg["model.activation"])
    write_metrics_csv(out / "metrics.csv", history)
    path = nn.save_snapshot(net, out / "weights" / "end.txt")
    plotting.training_curves(history, out / "figures" / "training.png", "source pre-training")
    print(f"pretrained {widths}: train accuracy {history[-1].train_accuracy:.4f}; weights at {path}")
    return 0


def cmd_inject_noise(cfg: Config, out: Path) -> int:
    target = pipeline.load_target(cfg)
    noisy, header = pipeline.corrupt(cfg, target)
    save_csv(out / "data.csv", target.features, target.labels)
    path = write_noise_record(out / "data.noise.csv", target.labels, noisy, header)
    print(f"{header['mode']} noise: realized rate {header['realized_rate']:.4f} "
          f"over {len(noisy)} rows; record at {path}")
    return 0


def run_training(cfg: Config, out: Path):
    """Shared body of ``train`` and each ``grid`` point; returns the metric history."""
    prep = pipeline.prepare(cfg)
    anchor = pipeline.load_anchor(cfg, prep.target)
    if anchor.input_width != prep.train.features.shape[1]:
        raise ConfigError("train.init: input width does not match the data")
    write_noise_record(out / "noise.csv", prep.target.labels, prep.noisy_labels, prep.noise_header)
    nn.save_snapshot(anchor, out / "weights" / "start.txt")
    tcfg = pipeline.train_config(cfg, len(prep.train), len(anchor))
    every = cfg["train.snapshot_every"]

    def snapshot(epoch, net):
        if every and epoch % every == 0:
            nn.save_snapshot(net, out / "weights" / f"epoch_{epoch:04d}.txt")

    run = finetune_vanilla if cfg["train.mode"] == "vanilla" else finetune_regsl
    net, history = run(prep.train, anchor, tcfg, val=prep.val, test=prep.test,
                       epoch_callback=snapshot if every else None)
    write_metrics_csv(out / "metrics.csv", history)
    nn.save_snapshot(net, out / "weights" / "end.txt")
    figs = out / "figures"
    plotting.training_curves(history, figs / "training.png", f"fine-tuning ({cfg['train.mode']})")
    plotting.distance_curves(history, figs / "distances.png",
                             tcfg.schedule.radii if tcfg.schedule is not None else None)
    plotting.selflabel_curves(history, figs / "selflabel.png")
    return history


def cmd_train(cfg: Config, out: Path) -> int:
    history = run_training(cfg, out)
    last = history[-1]
    parts = [f"epoch {last.epoch}", f"train {last.train_accuracy:.4f}"]
    if last.val_accuracy is not None:
        parts.append(f"val {last.val_accuracy:.4f}")
    if last.test_accuracy is not None:
        parts.append(f"test {last.test_accuracy:.4f}")
    print(f"{cfg['train.mode']}: " + ", ".join(parts) + f"; run directory {out}")
    return 0


REPORT_COLUMNS = ["metric", "sigma", "value", "stderr"]


def _snapshot(cfg: Config, key: str, flag: str | None) -> nn.Network:
    path = Path(flag) if flag is not None else cfg.require_file(key)
    if not path.is_file():
        raise ConfigError(f"{key}: file not found: {path}")
    try:
        return nn.load_snapshot(path)
    except (ValueError, nn.ShapeError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def diagnose_rows(cfg: Config, net: nn.Network, anchor: nn.Network, features, labels):
    """Report rows ``(metric, sigma, value, stderr)``."""
    rows = []
    dists = layer_distances(net, anchor)
    rows += [(f"layer_distance_{i}", None, d, None) for i, d in enumerate(dists)]
    try:
        ratios = distance_ratios(net, anchor)
    except DegenerateAnchorError:
        ratios = None
    if ratios is not None:
        rows += [(f"distance_ratio_{i}", None, r, None) for i, r in enumerate(ratios)]
        rows.append(("distance_ratio_rank_correlation", None, diag.rank_correlation(ratios), None))
    rows.append(("sum_squared_distance", None, diag.squared_distance(net, anchor), None))
    train_loss = diag.mean_cross_entropy(net, features, labels)
    rows.append(("train_loss", None, train_loss, None))
    H, L, delta = max(net.widths), len(net), cfg["diagnose.delta"]
    seed = cfg["run.seed"]
    for sigma in cfg["diagnose.sigmas"]:
        kl = diag.kl_gaussian(net, anchor, sigma) if sigma > 0 else None
        rows.append(("kl", sigma, kl, None))
        spec = diag.PerturbSpec(sigma, samples=cfg["diagnose.draws"], seed=seed,
                                perturb_biases=cfg["diagnose.perturb_biases"])
        mean, se = diag.perturbed_loss(net, features, labels, spec)
        rows.append(("perturbed_loss", sigma, mean, se))
        rows.append(("perturbation_radius", sigma, diag.perturbation_radius(sigma, H, L, delta), None))
    inputs = diag.bound_inputs_for(net, anchor, features, D=dists, eps=cfg["diagnose.eps"],
                                   delta=delta, C2=cfg["diagnose.C2"])
    rows.append(("bound", None, diag.pacbayes_bound(train_loss, inputs), None))
    rows.append(("bound.train_loss", None, train_loss, None))
    rows.append(("bound.L", None, inputs.L, None))
    rows += [(f"bound.B_{i}", None, b, None) for i, b in enumerate(inputs.B)]
    rows += [(f"bound.D_{i}", None, d, None) for i, d in enumerate(inputs.D)]
    for name in ("C1", "C2", "H", "eps", "delta", "n"):
        rows.append((f"bound.{name}", None, getattr(inputs, name), None))
    rows.append(("bound.sum_squared_D", None, diag.schedule_bound_summary(inputs.D), None))
    return rows


def cmd_diagnose(cfg: Config, out: Path, snapshot: str | None = None, anchor_path: str | None = None) -> int:
    net = _snapshot(cfg, "diagnose.snapshot", snapshot)
    anchor = _snapshot(cfg, "diagnose.anchor", anchor_path)
    try:
        nn.check_same_shapes(net, anchor)
    except nn.ShapeError as exc:
        raise ConfigError(f"diagnose.anchor: {exc}") from None
    prep = pipeline.prepare(cfg)
    if net.input_width != prep.train.features.shape[1]:
        raise ConfigError("diagnose.snapshot: input width does not match the data")
    feats, labels = prep.train.features, prep.train.noisy_labels
    rows = diagnose_rows(cfg, net, anchor, feats, labels)
    path = _write_rows(out / "report.csv", REPORT_COLUMNS, rows)
    figs = out / "figures"
    values = {r[0]: r[2] for r in rows if r[1] is None}
    plotting.layer_bars([values[f"layer_distance_{i}"] for i in range(len(net))],
                        figs / "distances.png", "distance from anchor")
    if "distance_ratio_0" in values:
        plotting.layer_bars([values[f"distance_ratio_{i}"] for i in range(len(net))],
                            figs / "distance_ratios.png", "relative distance")
    pl = [r for r in rows if r[0] == "perturbed_loss"]
    plotting.perturbed_loss_plot([r[1] for r in pl], [r[2] for r in pl], [r[3] for r in pl],
                                 figs / "perturbed_loss.png", values["train_loss"])
    print(f"bound {values['bound']:.6g} (train loss {values['train_loss']:.6g}); report at {path}")
    return 0


def read_grid(path: Path) -> list[tuple[str, list]]:
    if not path.is_file():
        raise ConfigError(f"--grid: file not found: {path}")
    raw = parse_lines(path.read_text(), str(path))
    if not raw:
        raise ConfigError(f"--grid: {path} defines no keys")
    axes = []
    for key, values in raw.items():
        items = values if isinstance(values, list) else [values]
        if not items:
            raise ConfigError(f"{key}: empty grid axis")
        # each item is one grid value; a list-valued key gets a one-element list per value
        for item in items:
            convert(key, item)
        axes.append((key, items))
    return axes


def point_label(point: dict) -> str:
    return ",".join(f"{k}={format_value(convert(k, point[k]))}" for k in sorted(point))


def select_best(rows) -> int | None:
    """Index of the highest final validation accuracy; ties go to the smallest label."""
    ok = [i for i, r in enumerate(rows) if r["val"] is not None]
    if not ok:
        return None
    return min(ok, key=lambda i: (-rows[i]["val"], rows[i]["label"]))


def cmd_grid(cfg: Config, out: Path, grid_path: str) -> int:
    axes = read_grid(Path(grid_path))
    keys = [k for k, _ in axes]
    results = []
    for i, combo in enumerate(itertools.product(*(v for _, v in axes))):
        point = dict(zip(keys, combo))
        pcfg = cfg.with_raw(point)
        run_dir = out / f"point_{i:03d}"
        write_snapshot_config(pcfg, run_dir, [f"grid point {i}: {point_label(point)}"])
        row = {"label": point_label(point), "dir": run_dir.name, "point": point,
               "val": None, "test": None, "train": None, "status": "ok"}
        try:
            last = run_training(pcfg, run_dir)[-1]
        except DivergenceError as exc:
            row["status"] = f"diverged: {exc}"
        else:
            if last.val_accuracy is None:
                raise ConfigError("data.fractions: grid selection needs a validation split")
            row.update(val=last.val_accuracy, test=last.test_accuracy, train=last.train_accuracy)
        results.append(row)
    best = select_best(results)
    header = ["point", "run_dir", *keys, "final_train_accuracy", "final_val_accuracy",
              "final_test_accuracy", "status", "selected"]
    table = [[i, r["dir"], *(format_value(convert(k, r["point"][k])) for k in keys),
              r["train"], r["val"], r["test"], r["status"], int(i == best)]
             for i, r in enumerate(results)]
    path = _write_rows(out / "summary.csv", header, table)
    plotting.grid_bars([r["label"] for r in results],
                       [r["val"] if r["val"] is not None else 0.0 for r in results],
                       out / "figures" / "grid.png", best)
    if best is None:
        print(f"every grid point diverged; summary at {path}", file=sys.stderr)
        return 1
    print(f"best of {len(results)}: {results[best]['label']} "
          f"(val {results[best]['val']:.4f}); summary at {path}")
    return 0


# -- argument handling -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    parser = argparse.ArgumentParser(prog="regsl", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common], help="pre-train the source network")
    p = sub.add_parser("inject-noise", parents=[common], help="write data and a noise record")
    p.add_argument("--mode", choices=("none", "independent", "correlated"))
    p.add_argument("--rate", type=float)
    p = sub.add_parser("train", parents=[common], help="fine-tune from the source network")
    p.add_argument("--mode", choices=("vanilla", "regsl"))
    p.add_argument("--init", help="start-point weight snapshot (overrides train.init)")
    p.add_argument("--no-correction", action="store_true", help="disable label correction")
    p.add_argument("--no-reweight", action="store_true", help="disable loss reweighting")
    p.add_argument("--no-regularization", action="store_true", help="drop the distance constraint")
    p = sub.add_parser("diagnose", parents=[common], help="measure a fine-tuned network")
    p.add_argument("--snapshot", help="fine-tuned weights (overrides diagnose.snapshot)")
    p.add_argument("--anchor", help="start-point weights (overrides diagnose.anchor)")
    p = sub.add_parser("grid", parents=[common], help="grid search over train settings")
    p.add_argument("--grid", required=True, help="file of 'key = [v1, v2, ...]' lines")
    return parser


def resolve_config(args) -> tuple[Config, list[str]]:
    cfg = Config.load(args.config) if args.config else Config()
    cfg = cfg.with_raw(dict(parse_assignment(s) for s in args.overrides))
    flags = {}
    if args.seed is not None:
        flags["run.seed"] = str(args.seed)
    notes = []
    if args.command == "inject-noise":
        if args.mode:
            flags["noise.mode"] = args.mode
        if args.rate is not None:
            flags["noise.rate"] = repr(args.rate)
    if args.command == "train":
        if args.mode:
            flags["train.mode"] = args.mode
        if args.init:
            flags["train.init"] = args.init
        for name, (key, value) in ABLATIONS.items():
            if getattr(args, name):
                flags[key] = value
                notes.append(name.replace("_", "-"))
    return cfg.with_raw(flags), notes


def default_out(args, cfg: Config, notes) -> Path:
    name = args.command
    if args.command == "train":
        name += f"-{cfg['train.mode']}"
    return Path("runs") / "-".join([name, *notes])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, notes = resolve_config(args)
        out = Path(args.out) if args.out else default_out(args, cfg, notes)
        write_snapshot_config(cfg, out, [f"ablations: {', '.join(notes)}"] if notes else [])
        if notes:
            print(f"ablations: {', '.join(notes)}")
        if args.command == "pretrain":
            return cmd_pretrain(cfg, out)
        if args.command == "inject-noise":
            return cmd_inject_noise(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, out, args.snapshot, args.anchor)
        return cmd_grid(cfg, out, args.grid)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
