"""Command-line front end for the estimation pipeline.

Commands: gen-data, pretrain, simulate, train-estimator, estimate, evaluate.
Outputs land in a run directory (--out, or $ADAPTGAUGE_OUT/run-<stamp>-<seed>).
Failures exit nonzero with a one-line `error category=<cat> detail=...`.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from . import pipeline

CATEGORIES = {
    ConfigError: "config_error",
    CheckpointError: "bad_artifact",
    FileNotFoundError: "missing_artifact",
    ValueError: "invalid_arguments",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptgauge",
        description="Label-free estimation of post-adaptation accuracy")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file; defaults apply otherwise")
        p.add_argument("--seed", type=int, help="override [run] master_seed")
        p.add_argument("--out", help="run directory (created if missing)")
        return p

    common(sub.add_parser("gen-data", help="generate the synthetic multi-domain dataset"))

    common(sub.add_parser("pretrain", help="pre-train the classifier on source domains"))

    p = common(sub.add_parser("simulate", help="generate the simulated episode corpus"))
    p.add_argument("--episodes", type=int, help="override [simulate] episodes")
    p.add_argument("--epochs", type=int, help="override [simulate] epochs")
    p.add_argument("--workers", type=int, default=1)

    p = common(sub.add_parser("train-estimator", help="fit the accuracy-change estimator"))
    p.add_argument("--epochs", type=int, help="override [estimator] epochs")
    p.add_argument("--feature-set", default="full", choices=pipeline.FEATURE_SETS)
    p.add_argument("--head", default="lstm", choices=("lstm", "mlp"))
    p.add_argument("--name", default=pipeline.ESTIMATOR_FILE,
                   help="output checkpoint filename inside the run directory")

    p = common(sub.add_parser("estimate", help="estimate accuracy change for a stored episode"))
    p.add_argument("--index", type=int, required=True, help="episode index in the log")
    p.add_argument("--estimator", default=pipeline.ESTIMATOR_FILE)

    p = common(sub.add_parser("evaluate", help="score the estimator against baselines"))
    p.add_argument("--epochs", type=int, help="override [evaluate] epochs")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--imbalance-rate", type=float,
                   help="also score with this validation drop rate on half the classes")
    p.add_argument("--ablation", action="append", default=[],
                   metavar="NAME=CKPT", help="rescore cells with a variant estimator")
    return parser


def resolve_run_dir(args, seed: int) -> str:
    if args.out:
        return args.out
    root = os.environ.get("ADAPTGAUGE_OUT", "runs")
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return os.path.join(root, f"run-{stamp}-seed{seed}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = []
        if args.seed is not None:
            overrides.append(("run", "master_seed", str(args.seed)))
        if getattr(args, "episodes", None) is not None:
            overrides.append(("simulate", "episodes", str(args.episodes)))
        if getattr(args, "epochs", None) is not None:
            section = {"simulate": "simulate", "train-estimator": "estimator",
                       "evaluate": "evaluate"}[args.command]
            overrides.append((section, "epochs", str(args.epochs)))
        cfg = load_config(args.config, overrides)
        run_dir = resolve_run_dir(args, cfg["run"]["master_seed"])
        os.makedirs(run_dir, exist_ok=True)
        _snapshot(cfg, run_dir, args.command)
        return _dispatch(args, cfg, run_dir)
    except Exception as err:  # noqa: BLE001 - single reporting point
        for klass, category in CATEGORIES.items():
            if isinstance(err, klass):
                break
        else:
            category = "runtime_error"
        print(f"error category={category} detail={err}", file=sys.stderr)
        return 1


def _snapshot(cfg, run_dir, command):
    with open(os.path.join(run_dir, f"resolved-{command}.ini"), "w") as f:
        f.write(cfg.dump())


def _dispatch(args, cfg, run_dir) -> int:
    if args.command == "gen-data":
        datasets = pipeline.stage_gen_data(cfg, run_dir)
        print(f"wrote {len(datasets)} domains to {run_dir}/{pipeline.DATASET_FILE}")
    elif args.command == "pretrain":
        meta = pipeline.stage_pretrain(cfg, run_dir)
        print(f"classifier holdout accuracy {meta['holdout_accuracy']:.4f} "
              f"(loss {meta['initial_loss']:.4f} -> {meta['final_loss']:.4f})")
    elif args.command == "simulate":
        report = pipeline.stage_simulate(cfg, run_dir, workers=args.workers)
        print(f"episodes requested={report.requested} completed={report.completed} "
              f"failed={report.failed} reused={report.reused}")
    elif args.command == "train-estimator":
        summary = pipeline.stage_train_estimator(
            cfg, run_dir, feature_set=args.feature_set, head=args.head,
            out_name=args.name)
        print(f"estimator best_val_loss={summary['best_val_loss']:.5f} "
              f"at epoch {summary['best_epoch']} "
              f"({summary['n_train']} train / {summary['n_val']} val episodes)")
    elif args.command == "estimate":
        for line in pipeline.stage_estimate(run_dir, args.index, args.estimator):
            print(line)
    elif args.command == "evaluate":
        ablations = {}
        for item in args.ablation:
            name, _, path = item.partition("=")
            if not path:
                raise ValueError(f"--ablation wants NAME=CKPT, got {item!r}")
            ablations[name] = path
        summary = pipeline.stage_evaluate(
            cfg, run_dir, workers=args.workers,
            imbalance_rate=args.imbalance_rate, ablations=ablations or None)
        for method, value in sorted(summary["methods"].items()):
            print(f"{method}: {100 * value:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
