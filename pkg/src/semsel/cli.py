"""Command-line entry point: ``semsel <subcommand> ...``.

Exit codes: 0 success, 1 other library error, 2 configuration error,
3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import atomic_write_text, load_bundle
from .errors import ConfigError, DataError, NumericalError, SemselError
from .experiment import (
    ExperimentConfig,
    compare,
    default_threads,
    make_plan,
    run_experiment,
)
from .ga import GaConfig
from .partition import verify_fold_plan
from .rankers import KINDS, RankerSpec
from .synthgen import SynthSpec, write_synth

log = logging.getLogger("semsel")


def _read_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bundle", help="bundle directory (semantics.csv, train.bin, test.bin, split.json)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="experiment config JSON, or a manifest.json from an earlier run")
    p.add_argument("--k", type=int, dest="k_folds", help="number of folds (default 5)")
    p.add_argument("--lambda", type=float, dest="lam", help="SAE regularisation weight (default 5e5)")
    p.add_argument("--seed", type=int, dest="master_seed", help="master seed (default 0)")
    p.add_argument("--accuracy-mode", choices=["per_instance", "per_class"])
    p.add_argument("--shuffle-classes", action="store_const", const=True,
                   help="shuffle seen-class order before slicing folds")
    p.add_argument("--normalize-prototypes", action="store_const", const=True)
    p.add_argument("--normalize-features", action="store_const", const=True)
    p.add_argument("--threads", type=int, help="worker threads (default $SEMSEL_THREADS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semsel", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic bundle with planted relevant attributes")
    p.add_argument("--spec", help="synthetic spec JSON (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("partition", help="write and verify the class-level fold plan")
    _add_common(p)

    p = sub.add_parser("baseline", help="SAE on all attributes")
    _add_common(p)

    p = sub.add_parser("rfs", help="ranking-based selection with fold consensus")
    _add_common(p)
    p.add_argument("--ranker", choices=KINDS)
    p.add_argument("--ranker-seed", type=int)
    p.add_argument("--threshold", type=int, help="headline consensus threshold (default 3)")
    p.add_argument("--stride", type=int, help="evaluate every s-th prefix, then refine (default 1)")

    p = sub.add_parser("ga", help="genetic-algorithm selection")
    _add_common(p)
    p.add_argument("--runs", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--pop-size", type=int)
    p.add_argument("--no-cv", action="store_true", help="score on the first fold only")

    p = sub.add_parser("oracle", help="exhaustive search (at most 16 attributes)")
    _add_common(p)

    p = sub.add_parser("compare", help="merge report.json files of one bundle")
    p.add_argument("reports", nargs="*", help="report.json files or output directories")
    p.add_argument("--out", help="merged CSV path (stdout when omitted)")
    return ap


def _config(args, method: str) -> ExperimentConfig:
    base = _read_json(args.config) if args.config else {}
    overrides = {
        "bundle_path": args.bundle, "output_dir": args.out, "k_folds": args.k_folds, "lam": args.lam,
        "master_seed": args.master_seed, "accuracy_mode": args.accuracy_mode,
        "shuffle_classes": args.shuffle_classes, "normalize_prototypes": args.normalize_prototypes,
        "normalize_features": args.normalize_features,
        "threshold": getattr(args, "threshold", None), "stride": getattr(args, "stride", None),
        "runs": getattr(args, "runs", None),
    }
    cfg = ExperimentConfig.from_json(base, **overrides)
    if method != cfg.method and not (method == "ga" and cfg.method == "ga_nocv"):
        cfg = replace(cfg, method=method)
    if getattr(args, "no_cv", False):
        cfg = replace(cfg, method="ga_nocv")
    if getattr(args, "ranker", None) or getattr(args, "ranker_seed", None) is not None:
        r = cfg.ranker
        cfg = replace(cfg, ranker=RankerSpec(args.ranker or r.kind,
                                             r.seed if args.ranker_seed is None else args.ranker_seed,
                                             dict(r.hyper)))
    ga_over = {k: v for k, v in (("generations", getattr(args, "generations", None)),
                                 ("pop_size", getattr(args, "pop_size", None))) if v is not None}
    if ga_over:
        cfg = replace(cfg, ga=GaConfig(**{**cfg.ga.to_json(), **ga_over}))
    if not cfg.bundle_path:
        raise ConfigError("--bundle is required (or bundle_path in --config)")
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    return replace(cfg, threads=threads)


def _cmd_synth(args) -> int:
    spec = SynthSpec.from_json(_read_json(args.spec)) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    bundle, truth = write_synth(spec, args.out)
    print(f"wrote {args.out}: {bundle.semantics.n_classes} classes, "
          f"{bundle.semantics.n_attributes} attributes, {int(truth.sum())} relevant")
    return 0


def _cmd_partition(args) -> int:
    cfg = _config(args, "baseline")
    bundle = load_bundle(cfg.bundle_path)
    plan = make_plan(bundle, cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "fold_plan.json", plan.dumps())
    problems = verify_fold_plan(plan)
    for msg in problems:
        print(msg, file=sys.stderr)
    print(f"{plan.k} folds over {plan.n} seen classes (block size {plan.l}, {plan.r} larger)")
    return DataError.exit_code if problems else 0


def _cmd_experiment(args, method: str) -> int:
    cfg = _config(args, method)
    report = run_experiment(cfg)
    for r in report.rows:
        acc = "n/a" if r.unseen_accuracy is None else f"{r.unseen_accuracy:.4f}"
        att = r.attribute_count if isinstance(r.attribute_count, int) else f"{r.attribute_count:.1f}"
        variant = f" {r.variant}" if r.variant else ""
        print(f"{r.method}{variant}: {att} attributes, unseen accuracy {acc}")
    return 0


def _cmd_compare(args) -> int:
    text = compare(args.reports, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "partition":
            return _cmd_partition(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_experiment(args, args.command)
    except SemselError as exc:
        print(f"semsel: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"semsel: {exc}", file=sys.stderr)
        return DataError.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"semsel: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code


if __name__ == "__main__":
    sys.exit(main())
