"""Command line entry point: ``fraudkit {extract,audit,train,evaluate}``.

Exit codes: 0 success, 1 data error, 2 contract or config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from fraudkit import pipeline as pl
from fraudkit.errors import FraudkitError


def _config(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig.load(args.config) if getattr(args, "config", None) else pl.PipelineConfig()
    d = cfg.to_dict()
    inputs = d["inputs"]
    for key, attr in (("features", "features_file"), ("edges", "edges"),
                      ("classes", "classes"), ("graph_features", "graph_features")):
        val = getattr(args, attr, None)
        if val is not None:
            inputs[key] = val
    if getattr(args, "raw_elliptic", False):
        inputs["raw_elliptic"] = True
    for key in ("train_end", "val_start", "val_end", "test_start"):
        val = getattr(args, key, None)
        if val is not None:
            d["split"][key] = val
    for key in ("n_trees", "max_depth", "min_samples_leaf", "class_weighting"):
        val = getattr(args, key, None)
        if val is not None:
            d["train"][key] = val
    for key in ("calibration", "seed", "n_jobs"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if getattr(args, "seed", None) is not None:
        d["train"]["seed"] = args.seed
    if getattr(args, "permutation_repeats", None) is not None:
        d["metrics"]["permutation_repeats"] = args.permutation_repeats
    if getattr(args, "out", None):
        d["output_dir"] = args.out
    return pl.PipelineConfig.from_dict(d)


def _common(p: argparse.ArgumentParser, with_inputs=True):
    p.add_argument("--config", help="JSON pipeline config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-jobs", type=int, dest="n_jobs")
    if with_inputs:
        p.add_argument("--edges")
        p.add_argument("--classes")
        p.add_argument("--graph-features", dest="graph_features",
                       help="cached causal descriptor CSV from `extract`")
        p.add_argument("--raw-elliptic", action="store_true",
                       help="features file has no header (raw Elliptic layout)")
        for key in ("train-end", "val-start", "val-end", "test-start"):
            p.add_argument(f"--{key}", type=int, dest=key.replace("-", "_"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fraudkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="compute graph descriptor matrices")
    _common(p)
    p.add_argument("--features", dest="features_file", help="features CSV")
    p.add_argument("--mode", choices=("causal", "full", "both"), default="causal")

    p = sub.add_parser("audit", help="compare causal and full-graph descriptors")
    p.add_argument("--causal", required=True)
    p.add_argument("--full", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="accepted for uniformity; audit is deterministic")

    p = sub.add_parser("train", help="train the forest and fit calibrators")
    _common(p)
    p.add_argument("--features", dest="feature_config", choices=("T", "G", "TG", "T+G"),
                   default="TG", help="feature configuration")
    p.add_argument("--features-file", dest="features_file", help="features CSV")
    p.add_argument("--n-trees", type=int, dest="n_trees")
    p.add_argument("--max-depth", type=int, dest="max_depth")
    p.add_argument("--min-samples-leaf", type=int, dest="min_samples_leaf")
    p.add_argument("--class-weighting", choices=("balanced", "none"), dest="class_weighting")
    p.add_argument("--calibration", choices=("none", "sigmoid", "isotonic", "both"))

    p = sub.add_parser("evaluate", help="write the evaluation report")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features-file", dest="features_file", help="features CSV")
    p.add_argument("--permutation-repeats", type=int, dest="permutation_repeats")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "audit":
            pl.run_audit(args.causal, args.full, args.tol, args.out)
        else:
            cfg = _config(args)
            if args.command == "extract":
                paths = pl.run_extract(cfg, args.mode)
                for p in paths.values():
                    print(p)
            elif args.command == "train":
                print(pl.run_train(cfg, args.feature_config))
            elif args.command == "evaluate":
                summary = pl.run_evaluate(cfg, args.model)
                for split, variants in summary["splits"].items():
                    for v, e in variants.items():
                        print(f"{split:10s} {v:8s} roc_auc={e['roc_auc']:.4f} "
                              f"ap={e['average_precision']:.4f} brier={e['brier']:.4f}")
    except FraudkitError as exc:
        print(f"fraudkit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError) as exc:
        print(f"fraudkit: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
