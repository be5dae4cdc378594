"""Command-line entry point: ``dpla {gen-data,run,eval,check-grads,export}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, config_to_yaml, parse_config, resolve
from .datagen import content_hash, load_splits, save_splits
from .evaluation import REPORT_FIELDS, MetricsReport
from .gradcheck import run_suite
from .model import load_checkpoint, save_checkpoint
from .trainer import ExperimentConfig, evaluate, evaluate_unlabeled, make_data, run_experiment

log = logging.getLogger("dpla")

CACHE_ENV = "DPLA_CACHE_DIR"
GRAD_TOLERANCE = 1e-5


class CommandError(RuntimeError):
    pass


def load_config(args) -> ExperimentConfig:
    overrides = {"seed": args.seed, "epochs": args.epochs, "preset": args.preset}
    if args.baseline:
        overrides["baseline_mode"] = True
    if args.config:
        return parse_config(args.config, overrides)
    return resolve({}, overrides, "<defaults>")


def _dataset_key(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    keep = {k: d[k] for k in ("dataset", "separation", "test_per_class", "data_path", "test_path")}
    return hashlib.sha1(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]


def cache_path(cfg: ExperimentConfig, out: Path) -> Path:
    root = Path(os.environ.get(CACHE_ENV) or out / "cache")
    return root / f"dataset-{_dataset_key(cfg)}.bin"


def get_data(cfg: ExperimentConfig, out: Path, create: bool = True):
    path = cache_path(cfg, out)
    if path.exists():
        splits, tx, ty = load_splits(path)
        return splits, tx, ty, path
    if not create:
        raise CommandError(f"dataset cache {path} not found; run gen-data first")
    splits, tx, ty = make_data(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_splits(path, splits, tx, ty)
    return splits, tx, ty, path


def cmd_gen_data(args, cfg):
    out = Path(args.out)
    splits, tx, _, path = get_data(cfg, out)
    print(f"{path} labeled={splits.labeled_y.size} unlabeled={splits.unlabeled_x.shape[0]} test={tx.shape[0]}")


def cmd_run(args, cfg):
    out = Path(args.out)
    splits, tx, ty, path = get_data(cfg, out)
    result = run_experiment(cfg, splits, (tx, ty))
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.jsonl").write_text("".join(r.to_record() + "\n" for r in result.history))
    (out / "losses.jsonl").write_text("".join(json.dumps(s) + "\n" for s in result.loss_history))
    save_checkpoint(out / "model.ckpt", result.state.model)
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "dataset_cache": str(path),
        "dataset_hash": content_hash(path),
        "unlabeled_report": result.unlabeled_report.to_record(),
        "config": yaml.safe_load(config_to_yaml(cfg)),
    }
    (out / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False))
    print(result.final.to_record())


def cmd_eval(args, cfg):
    out = Path(args.out)
    ckpt = Path(args.checkpoint or out / "model.ckpt")
    if not ckpt.is_file():
        raise CommandError(f"checkpoint {ckpt} not found")
    model = load_checkpoint(ckpt)
    splits, tx, ty, _ = get_data(cfg, out, create=False)
    if model.input_dim != splits.input_dim or model.c_t != splits.c_t:
        raise CommandError(f"checkpoint {ckpt} does not match the configured dataset")
    test = evaluate(model, tx, ty, splits.c_k, splits.c_t, epoch=0)
    unl = evaluate_unlabeled(model, splits)
    print(test.to_record())
    print(unl.to_record())


def cmd_check_grads(args, cfg):
    errors = run_suite(seed=args.seed or 0)
    for name, err in errors.items():
        print(f"{name:22s} {err:.3e}")
    worst = max(errors.values())
    print(f"max relative error {worst:.3e} (tolerance {GRAD_TOLERANCE:.0e})")
    if worst > GRAD_TOLERANCE:
        raise CommandError("gradient check failed")


def export_metrics(metrics_path, csv_path) -> int:
    lines = [ln for ln in Path(metrics_path).read_text().splitlines() if ln.strip()]
    reports = [MetricsReport.from_record(ln) for ln in lines]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow(r.as_fields())
    return len(reports)


def cmd_export(args, cfg):
    out = Path(args.out)
    src = Path(args.metrics or out / "metrics.jsonl")
    if not src.is_file():
        raise CommandError(f"metrics file {src} not found")
    dst = Path(args.output or out / "metrics.csv")
    n = export_metrics(src, dst)
    print(f"{dst} rows={n}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "run": cmd_run,
    "eval": cmd_eval,
    "check-grads": cmd_check_grads,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--preset", help="named preset (toy, cifar10-like, cifar100-like, svhn-like)")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--baseline", action="store_true", help="disable both adjustment stages")
    common.add_argument("--out", default="runs/default", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dpla", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="materialize and cache the dataset splits")
    sub.add_parser("run", parents=[common], help="train and write metrics, checkpoint and manifest")
    p = sub.add_parser("eval", parents=[common], help="re-score a saved checkpoint")
    p.add_argument("--checkpoint")
    sub.add_parser("check-grads", parents=[common], help="finite-difference gradient suite")
    p = sub.add_parser("export", parents=[common], help="convert metric records to CSV")
    p.add_argument("--metrics", help="metrics.jsonl to read (default <out>/metrics.jsonl)")
    p.add_argument("--output", help="CSV path (default <out>/metrics.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, CommandError, OSError, ValueError) as e:
        print(f"dpla {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
