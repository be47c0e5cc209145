"""Command-line entry point: ``deepfake-vit <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import CheckpointError, ConfigError, ContractError, NonFiniteError
from .harness import (run_compare, run_evaluate, run_generate_data, run_train_student,
                      run_train_teacher)
from .metrics import DEFAULT_THRESHOLD


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "lam", None) is not None:
        cfg.loss.lam = args.lam
    if args.out is not None:
        cfg.out = args.out
    cfg.validate()
    return cfg.resolved()


def cmd_generate_data(args) -> None:
    cfg = _experiment(args)
    written = run_generate_data(cfg, Path(cfg.out))
    for name, path in written.items():
        print(f"{name}: {path}")


def cmd_train_teacher(args) -> None:
    cfg = _experiment(args)
    res = run_train_teacher(cfg, Path(cfg.out))
    print(f"teacher best epoch {res.result.best_epoch} val L_train {res.result.best_val:.6f}")
    print(f"checkpoint: {res.checkpoint}\nlog: {res.log}")


def cmd_train_student(args) -> None:
    cfg = _experiment(args)
    res = run_train_student(cfg, Path(cfg.out), args.teacher)
    print(f"student best epoch {res.result.best_epoch} val L_train {res.result.best_val:.6f}")
    print(f"checkpoint: {res.checkpoint}\nlog: {res.log}")


def cmd_evaluate(args) -> None:
    cfg = None
    if args.config or args.seed is not None:
        cfg = _experiment(args)
    out = Path(args.out or "runs/eval")
    res = run_evaluate(args.checkpoint, out, cfg, args.head, args.threshold, args.split,
                       args.teacher, args.lam)
    r = res.report
    auc = "n/a" if r.auc is None else f"{r.auc:.4f}"
    print(f"{r.head} on {args.split}: auc {auc} log_loss {r.log_loss:.4f} f1 {r.f1:.1f} "
          f"TP {r.tp} FP {r.fp} TN {r.tn} FN {r.fn}")
    if "L_train" in r.extra:
        print(f"L_fake {r.extra['L_fake']!r} L_real {r.extra['L_real']!r} L_train {r.extra['L_train']!r}")
    for name, path in res.paths.items():
        print(f"{name}: {path}")


def cmd_compare(args) -> None:
    out = Path(args.out or "runs/compare")
    for name, path in run_compare(args.report_a, args.report_b, out).items():
        print(f"{name}: {path}")
    print((out / "comparison.csv").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepfake-vit",
                                     description="Hybrid ViT deepfake detector with a distilled CNN teacher.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, lam=False):
        p.add_argument("--config", help="flat 'section.key = value' config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        if lam:
            p.add_argument("--lambda", dest="lam", type=float, help="class/distill loss weight")

    p = sub.add_parser("generate-data", help="export the synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train-teacher", help="train the CNN teacher")
    common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="distill the hybrid ViT from a teacher")
    common(p, lam=True)
    p.add_argument("--teacher", help="teacher checkpoint (required unless --lambda 1)")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    common(p, lam=True)
    p.add_argument("checkpoint")
    p.add_argument("--head", choices=("class", "distill"), default="distill")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--teacher", help="teacher checkpoint, to also report the split's training loss")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="correlate two evaluation reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, CheckpointError, ContractError, NonFiniteError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
