"""Experiment runner: config, method dispatch, report and artifact emission.

Every random stream is derived from ``master_seed``:

* fold-order shuffle (when enabled): ``derive_seed(master, "partition")``
* ranker: ``derive_seed(master, "ranker")``, then per fold ``derive_seed(.., "rank", k)``
* GA run ``r``: ``derive_seed(derive_seed(master, "ga"), "ga", r)``

Selection only ever sees fold views built from the training instances of
seen classes; the unseen test set is touched once per final mask.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import ZslBundle, atomic_write_text, load_bundle
from .errors import BundleMismatch, ConfigError, DataError, MissingFile
from .ga import GaConfig, hamming_matrix, multi_run
from .partition import DEFAULT_K, FoldPlan, build_fold_plan, verify_fold_plan
from .rankers import RankerSpec
from .rfs import (
    HEADLINE_THRESHOLD,
    best_threshold,
    evaluate_thresholds,
    mask_csv,
    run_rfs,
    write_outputs,
)
from .sae import DEFAULT_LAMBDA, SaeSettings, evaluate_on_unseen, training_count
from .seeding import derive_seed
from .synthgen import exhaustive_best_mask

METHODS = ("baseline", "rfs", "ga", "ga_nocv", "oracle")
REPORT_COLUMNS = ("method", "variant", "attribute_count", "unseen_accuracy", "sae_training_count",
                  "accuracy_mode")


def default_threads() -> int:
    env = os.environ.get("SEMSEL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"SEMSEL_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


@dataclass
class ExperimentConfig:
    bundle_path: str = ""
    method: str = "baseline"
    output_dir: str = "out"
    k_folds: int = DEFAULT_K
    lam: float = DEFAULT_LAMBDA
    ranker: RankerSpec = field(default_factory=RankerSpec)
    ga: GaConfig = field(default_factory=GaConfig)
    runs: int = 20
    accuracy_mode: str = "per_instance"
    master_seed: int = 0
    shuffle_classes: bool = False
    threshold: int = HEADLINE_THRESHOLD
    stride: int = 1
    normalize_prototypes: bool = False
    normalize_features: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.accuracy_mode not in ("per_instance", "per_class"):
            raise ConfigError(f"accuracy_mode must be per_instance or per_class, not {self.accuracy_mode!r}")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        if not 1 <= self.threshold <= self.k_folds:
            raise ConfigError(f"threshold must lie in [1, {self.k_folds}]")
        if self.stride < 1:
            raise ConfigError("stride must be at least 1")

    @property
    def settings(self) -> SaeSettings:
        return SaeSettings(self.lam, self.accuracy_mode == "per_class",
                           self.normalize_prototypes, self.normalize_features)

    def to_json(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["ranker"] = self.ranker.to_json()
        d["ga"] = self.ga.to_json()
        d["lambda"] = d.pop("lam")
        # where results go and how many threads compute them do not change the results
        del d["threads"], d["output_dir"]
        return d

    @classmethod
    def from_json(cls, obj: dict, **overrides) -> "ExperimentConfig":
        obj = dict(obj.get("config", obj))
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if isinstance(obj.get("ranker"), dict):
                obj["ranker"] = RankerSpec(**obj["ranker"])
            if isinstance(obj.get("ga"), dict):
                obj["ga"] = GaConfig(**obj["ga"])
            obj.update({k: v for k, v in overrides.items() if v is not None})
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class ReportRow:
    method: str
    variant: str
    attribute_count: float
    unseen_accuracy: float | None
    sae_training_count: int
    wall_time_seconds: float = 0.0
    accuracy_mode: str = "per_instance"


@dataclass
class ComparisonReport:
    bundle_hash: str
    rows: list[ReportRow]
    n_attributes: int

    def to_json(self) -> dict:
        rows = []
        for r in self.rows:
            d = asdict(r)
            del d["wall_time_seconds"]
            rows.append(d)
        return {"bundle_hash": self.bundle_hash, "n_attributes": self.n_attributes, "rows": rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.method, r.variant, _num(r.attribute_count), _num(r.unseen_accuracy),
                        r.sae_training_count, r.accuracy_mode])
        return buf.getvalue()

    def timings(self) -> dict:
        return {f"{r.method}/{r.variant}": r.wall_time_seconds for r in self.rows}


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write_hamming(path: Path, masks) -> None:
    # pairwise distances stand in for a 2-D embedding plot of the masks
    d = hamming_matrix(masks) if len(masks) > 1 else np.zeros((len(masks), len(masks)))
    atomic_write_text(path, _csv([f"m{i:02d}" for i in range(len(masks))],
                                 [[repr(float(v)) for v in row] for row in d]))


class _Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        self.n0 = training_count()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
        self.trainings = training_count() - self.n0


def make_plan(bundle: ZslBundle, config: ExperimentConfig) -> FoldPlan:
    seed = derive_seed(config.master_seed, "partition") if config.shuffle_classes else None
    plan = build_fold_plan(bundle.split.seen, config.k_folds, seed)
    problems = verify_fold_plan(plan)
    if problems:  # unreachable for generated plans; kept as a guard for replayed ones
        raise DataError("; ".join(problems))
    return plan


def _baseline(bundle, config, out) -> list[ReportRow]:
    with _Stopwatch() as sw:
        acc = evaluate_on_unseen(bundle, None, config.settings)
    return [ReportRow("baseline", "", bundle.semantics.n_attributes, acc, sw.trainings, sw.seconds,
                      config.accuracy_mode)]


def _rfs(bundle, config, out, plan) -> list[ReportRow]:
    names = bundle.semantics.attribute_names
    ranker = replace(config.ranker, seed=derive_seed(config.master_seed, "ranker"))
    with _Stopwatch() as sel:
        result = run_rfs(bundle, plan, ranker, config.settings, stride=config.stride, threads=config.threads)
    with _Stopwatch() as ev:
        rows = evaluate_thresholds(bundle, result, config.settings)
    write_outputs(out, result, rows, names)
    for f in result.folds:
        f.ranking.write_csv(out / f"rfs_ranking_fold{f.fold_index + 1}.csv", names)
    mode = config.accuracy_mode
    per_eval = ev.trainings / max(1, sum(r["unseen_accuracy"] is not None for r in rows))
    report = []
    for r in rows:
        report.append(ReportRow("rfs", f"T{r['threshold']}", r["attribute_count"], r["unseen_accuracy"],
                                sel.trainings + int(per_eval if r["unseen_accuracy"] is not None else 0),
                                sel.seconds, mode))
    head = next(r for r in rows if r["threshold"] == config.threshold)
    report.append(ReportRow("rfs", f"headline_T{config.threshold}", head["attribute_count"],
                            head["unseen_accuracy"],
                            sel.trainings + int(per_eval if head["unseen_accuracy"] is not None else 0),
                            sel.seconds, mode))
    best = best_threshold(rows)
    if best is not None:
        report.append(ReportRow("rfs", f"best_T{best['threshold']}", best["attribute_count"],
                                best["unseen_accuracy"], sel.trainings + int(per_eval), sel.seconds, mode))
    return report


def _ga(bundle, config, out, plan, use_cv: bool) -> list[ReportRow]:
    names = bundle.semantics.attribute_names
    method = "ga" if use_cv else "ga_nocv"
    ga_cfg = replace(config.ga, use_cv=use_cv)
    master = derive_seed(config.master_seed, "ga")
    with _Stopwatch() as sw:
        res = multi_run(bundle, plan, ga_cfg, config.settings, config.runs, master_seed=master,
                        threads=config.threads)
    rows, trace_rows, run_rows = [], [], []
    mode = config.accuracy_mode
    for r, (g, seed, acc) in enumerate(zip(res.results, res.seeds, res.unseen_accuracy)):
        if g is None:
            run_rows.append([r, seed, "", "", "", "", "", ""])
            continue
        t = g.trace
        last = t.records[-1]
        run_rows.append([r, seed, repr(g.best_fitness), int(g.best_mask.sum()), _num(acc), t.sae_trainings,
                         last["cache_hits"], last["cache_misses"]])
        for rec in t.records:
            trace_rows.append([r, rec["generation"], repr(rec["best"]), repr(rec["mean"]),
                               repr(rec["diversity"]), rec["cache_hits"], rec["cache_misses"],
                               repr(rec["generation_best"]), rec["evaluated"]])
        rows.append(ReportRow(method, f"run{r:02d}", int(g.best_mask.sum()), acc, t.sae_trainings + 1,
                              sw.seconds / config.runs, mode))
    ok = [g for g in res.results if g is not None]
    summary = res.accuracy_summary()
    if ok:
        mean_att = float(np.mean([g.best_mask.sum() for g in ok]))
        rows.append(ReportRow(method, "mean", mean_att, summary["mean"], sw.trainings, sw.seconds, mode))
        best_run = max(range(len(ok)), key=lambda i: (ok[i].best_fitness, -i))
        best_mask = ok[best_run].best_mask
        atomic_write_text(out / f"{method}_best_mask.csv", mask_csv(best_mask, names))
        _write_hamming(out / f"{method}_best_masks_hamming.csv", [g.best_mask for g in ok])
        _write_hamming(out / f"{method}_final_population_hamming.csv", list(ok[0].final_population))
    atomic_write_text(out / f"{method}_trace.csv",
                      _csv(["run", "generation", "best", "mean", "diversity", "cache_hits", "cache_misses",
                            "generation_best", "evaluated"], trace_rows))
    atomic_write_text(out / f"{method}_runs.csv",
                      _csv(["run", "seed", "best_fitness", "attribute_count", "unseen_accuracy",
                            "sae_trainings", "cache_hits", "cache_misses"], run_rows))
    atomic_write_text(out / f"{method}_frequency.csv",
                      _csv(["attribute_index", "attribute_name", "frequency"],
                           [[j, n, int(f)] for j, (n, f) in enumerate(zip(names, res.frequency))]))
    _write_json(out / f"{method}_summary.json", {
        "config": ga_cfg.to_json(), "master_seed": master, "seeds": res.seeds,
        "accuracy": summary, "failures": res.failures,
    })
    return rows


def _oracle(bundle, config, out, plan) -> list[ReportRow]:
    names = bundle.semantics.attribute_names
    with _Stopwatch() as sw:
        mask, fit = exhaustive_best_mask(bundle, plan, config.settings)
        acc = evaluate_on_unseen(bundle, mask, config.settings)
    atomic_write_text(out / "oracle_mask.csv", mask_csv(mask, names))
    _write_json(out / "oracle.json", {"fitness": fit, "attributes": np.flatnonzero(mask).tolist(),
                                      "unseen_accuracy": acc})
    return [ReportRow("oracle", "", int(mask.sum()), acc, sw.trainings, sw.seconds, config.accuracy_mode)]


def run_experiment(config: ExperimentConfig, bundle: ZslBundle | None = None) -> ComparisonReport:
    if bundle is None:
        bundle = load_bundle(config.bundle_path)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle_hash = bundle.identity_hash()

    plan = None
    if config.method != "baseline":
        plan = make_plan(bundle, config)
        atomic_write_text(out / "fold_plan.json", plan.dumps())

    if config.method == "baseline":
        rows = _baseline(bundle, config, out)
    elif config.method == "rfs":
        rows = _rfs(bundle, config, out, plan)
    elif config.method in ("ga", "ga_nocv"):
        rows = _ga(bundle, config, out, plan, use_cv=config.method == "ga")
    else:
        rows = _oracle(bundle, config, out, plan)

    report = ComparisonReport(bundle_hash, rows, bundle.semantics.n_attributes)
    atomic_write_text(out / "report.csv", report.to_csv())
    _write_json(out / "report.json", report.to_json())
    _write_json(out / "timing.json", report.timings())
    _write_json(out / "manifest.json", {
        "semsel_version": __version__,
        "bundle_hash": bundle_hash,
        "config": config.to_json(),
        "derived_seeds": {
            "partition": derive_seed(config.master_seed, "partition") if config.shuffle_classes else None,
            "ranker": derive_seed(config.master_seed, "ranker"),
            "ga_master": derive_seed(config.master_seed, "ga"),
        },
        "sae": config.settings.to_json(),
    })
    return report


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def compare(report_paths, out_path=None) -> str:
    """Merge report.json files of one bundle into a CSV with the best accuracy flagged."""
    paths = [Path(p) for p in report_paths]
    if not paths:
        raise ConfigError("compare needs at least one report")
    reports = []
    for p in paths:
        if p.is_dir():
            p = p / "report.json"
        if not p.exists():
            raise MissingFile(str(p))
        reports.append(json.loads(p.read_text(encoding="utf-8")))
    hashes = {r["bundle_hash"] for r in reports}
    if len(hashes) != 1:
        raise BundleMismatch(f"reports come from {len(hashes)} different bundles")
    merged: dict[tuple[str, str], dict] = {}
    for rep in reports:
        for row in rep["rows"]:
            merged[(row["method"], row["variant"])] = row
    rows = list(merged.values())
    accs = [r["unseen_accuracy"] for r in rows if r["unseen_accuracy"] is not None]
    top = max(accs) if accs else None
    lines = []
    for r in rows:
        lines.append([r["method"], r["variant"], _num(r["attribute_count"]), _num(r["unseen_accuracy"]),
                      r["sae_training_count"], r["accuracy_mode"],
                      int(top is not None and r["unseen_accuracy"] == top)])
    text = _csv([*REPORT_COLUMNS, "best"], lines)
    if out_path is not None:
        atomic_write_text(out_path, text)
    return text
