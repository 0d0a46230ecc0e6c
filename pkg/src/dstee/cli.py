"""Command line entry point: ``dstee {train,eval,sweep,compare}``.

On failure a single machine-readable line ``{"error": ..., "message": ...}``
is written to stderr and the exit code is nonzero (2 for configuration or
format problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .checkpoint import load_checkpoint
from .config import ExperimentConfig, load_config, parse_pairs
from .errors import ConfigError, FormatError
from .harness import SweepSpec, load_dataset, run_compare, run_sweep, run_train
from .trainer import accuracy


def _csv(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return tuple(text.split("=", 1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dstee", description="Dynamic sparse training experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="flat key = value config file")
        p.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory (overrides out_dir)")

    p = sub.add_parser("train", help="run one training job")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--overwrite", action="store_true", help="rerun even if a finished run exists")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    common(p, config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", choices=("mnist", "synthetic_blobs", "synthetic_moons"))
    p.add_argument("--data-dir")

    p = sub.add_parser("sweep", help="grid over one parameter and several seeds")
    common(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, type=_csv(float))
    p.add_argument("--seeds", type=_csv(int))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("compare", help="run several growth policies on identical seeds")
    common(p)
    p.add_argument("--policies", default="random,gradient,dst_ee", type=_csv(str))
    p.add_argument("--seeds", type=_csv(int))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--overwrite", action="store_true")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = parse_pairs(args.overrides, cfg)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "dataset", None):
        cfg = cfg.replace(dataset=args.dataset)
    if getattr(args, "data_dir", None):
        cfg = cfg.replace(data_dir=args.data_dir)
    return cfg


def run(args) -> dict:
    cfg = _config(args)
    if args.command == "train":
        return run_train(cfg, overwrite=args.overwrite)
    if args.command == "eval":
        ckpt = load_checkpoint(args.checkpoint)
        data = load_dataset(cfg)
        acc = accuracy(ckpt.net, ckpt.params, [l.mask for l in ckpt.layers], data.x_test, data.y_test)
        return {"checkpoint": args.checkpoint, "dataset": cfg.dataset, "test_accuracy": acc,
                "iteration": ckpt.iteration, "round": ckpt.round_index}
    if args.command == "sweep":
        root = run_sweep(SweepSpec(args.param, tuple(args.values), cfg), args.seeds, args.overwrite, args.jobs)
        return {"aggregate": str(root / "aggregate.csv"), "summary": str(root / "aggregate_summary.csv")}
    root = run_compare(cfg, args.policies, args.seeds, args.overwrite, args.jobs)
    return {"compare": str(root / "compare.csv"), "summary": str(root / "compare_summary.csv")}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except (ConfigError, FormatError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
