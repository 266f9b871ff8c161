"""Ranking-based attribute selection with a cross-validated wrapper and fold consensus.

Per fold: rank attributes on the pseudo-seen prototypes, then walk the
ranking prefix by prefix, scoring SAE on the pseudo-unseen classes, and keep
the best prefix (fewest attributes on ties). Across folds, count how often
each attribute was kept; threshold ``T_i`` keeps attributes kept in at least
``i`` folds.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import ZslBundle, atomic_write_text
from .errors import EmptyMask, SemselError
from .partition import FoldPlan, FoldView, fold_views
from .rankers import RankerSpec, Ranking, rank_attributes
from .sae import SaeSettings, evaluate_on_unseen, subset_evaluator
from .seeding import derive_seed

HEADLINE_THRESHOLD = 3


@dataclass(frozen=True, eq=False)
class FoldSelection:
    fold_index: int
    ranking: Ranking
    prefix_accuracies: np.ndarray  # NaN where a prefix was skipped by striding
    chosen_size: int
    chosen_mask: np.ndarray

    def to_json(self) -> dict:
        acc = [None if np.isnan(a) else float(a) for a in self.prefix_accuracies]
        return {
            "fold": self.fold_index,
            "ranking": self.ranking.order.tolist(),
            "scores": [float(s) for s in self.ranking.scores],
            "prefix_accuracies": acc,
            "chosen_size": self.chosen_size,
            "chosen_attributes": np.flatnonzero(self.chosen_mask).tolist(),
        }


@dataclass(frozen=True, eq=False)
class ConsensusResult:
    frequency: np.ndarray
    masks_by_threshold: dict[int, np.ndarray]

    @property
    def k(self) -> int:
        return len(self.masks_by_threshold)


def choose_prefix(prefix_accuracies) -> int:
    """1-based prefix length with the highest accuracy; shortest wins ties."""
    acc = np.asarray(prefix_accuracies, dtype=np.float64)
    if acc.size == 0 or np.all(np.isnan(acc)):
        raise ValueError("no evaluated prefixes")
    return int(np.nanargmax(acc)) + 1


def _walk(ranking: Ranking, score, stride: int = 1) -> np.ndarray:
    n = ranking.order.size
    acc = np.full(n, np.nan)

    def visit(i):
        if np.isnan(acc[i - 1]):
            acc[i - 1] = score(ranking.top(i))

    if stride <= 1:
        for i in range(1, n + 1):
            visit(i)
        return acc
    for i in list(range(stride, n + 1, stride)) + [1, n]:
        visit(i)
    best = choose_prefix(acc)
    for i in range(max(1, best - stride + 1), min(n, best + stride - 1) + 1):
        visit(i)
    return acc


def wrapper_walk(ranking: Ranking, train_view: FoldView, val_view: FoldView,
                 lam=SaeSettings(), *, fold_index: int = 0, stride: int = 1) -> FoldSelection:
    ev = subset_evaluator(train_view.semantics, train_view.visual, val_view.semantics,
                          val_view.visual, lam)
    acc = _walk(ranking, ev.accuracy, stride)
    size = choose_prefix(acc)
    return FoldSelection(fold_index, ranking, acc, size, ranking.top(size))


def consensus(fold_masks, k: int | None = None) -> ConsensusResult:
    masks = np.array([np.asarray(m, dtype=bool) for m in fold_masks])
    k = masks.shape[0] if k is None else k
    freq = masks.sum(axis=0).astype(np.int64)
    return ConsensusResult(freq, {i: freq >= i for i in range(1, k + 1)})


@dataclass(frozen=True, eq=False)
class RfsResult:
    consensus: ConsensusResult
    folds: list[FoldSelection]
    ranker: RankerSpec


def fold_ranker(spec: RankerSpec, fold_index: int) -> RankerSpec:
    return RankerSpec(spec.kind, derive_seed(spec.seed, "rank", fold_index), dict(spec.hyper))


def run_rfs(bundle: ZslBundle, plan: FoldPlan, ranker: RankerSpec = RankerSpec(),
            lam=SaeSettings(), *, stride: int = 1, threads: int = 1) -> RfsResult:
    """Rank, walk and vote on every fold of ``plan``.

    Each fold re-ranks on its own pseudo-seen prototypes with seed
    ``derive_seed(ranker.seed, "rank", fold)``. Folds are independent and may
    run in parallel; results are merged by fold index.
    """
    settings = SaeSettings.coerce(lam)

    def one(k: int) -> FoldSelection:
        tr, va = fold_views(bundle, plan, k)
        ranking = rank_attributes(fold_ranker(ranker, k), tr.semantics)
        return wrapper_walk(ranking, tr, va, settings, fold_index=k, stride=stride)

    idx = range(len(plan.folds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            folds = list(pool.map(one, idx))
    else:
        folds = [one(k) for k in idx]
    return RfsResult(consensus([f.chosen_mask for f in folds], plan.k), folds, ranker)


def evaluate_thresholds(bundle: ZslBundle, result: ConsensusResult | RfsResult,
                        lam=SaeSettings()) -> list[dict]:
    """Unseen accuracy of every threshold mask, retrained on all seen classes.

    Empty masks are reported with ``unseen_accuracy = None`` and a note.
    """
    if isinstance(result, RfsResult):
        result = result.consensus
    settings = SaeSettings.coerce(lam)
    rows = []
    for i, mask in sorted(result.masks_by_threshold.items()):
        row = {"threshold": i, "attribute_count": int(mask.sum()), "unseen_accuracy": None, "note": ""}
        if not mask.any():
            row["note"] = "no solution: empty mask"
        else:
            try:
                row["unseen_accuracy"] = evaluate_on_unseen(bundle, mask, settings)
            except EmptyMask as exc:
                row["note"] = f"no solution: {exc}"
            except SemselError as exc:
                row["note"] = f"failed: {exc}"
        rows.append(row)
    return rows


def best_threshold(rows: list[dict]) -> dict | None:
    """Row with the highest unseen accuracy; fewer attributes win ties."""
    scored = [r for r in rows if r["unseen_accuracy"] is not None]
    if not scored:
        return None
    return min(scored, key=lambda r: (-r["unseen_accuracy"], r["attribute_count"], r["threshold"]))


def report_json(result: RfsResult, rows: list[dict], attribute_names) -> dict:
    c = result.consensus
    return {
        "ranker": result.ranker.to_json(),
        "folds": [f.to_json() for f in result.folds],
        "frequency": c.frequency.tolist(),
        "thresholds": [
            {**row, "attributes": np.flatnonzero(c.masks_by_threshold[row["threshold"]]).tolist()}
            for row in rows
        ],
        "attribute_names": list(attribute_names),
    }


def mask_csv(mask: np.ndarray, attribute_names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["attribute_index", "name", "selected"])
    for j, (name, sel) in enumerate(zip(attribute_names, mask)):
        w.writerow([j, name, int(bool(sel))])
    return buf.getvalue()


def write_outputs(out_dir, result: RfsResult, rows: list[dict], attribute_names) -> None:
    from pathlib import Path

    out = Path(out_dir)
    atomic_write_text(out / "rfs_report.json",
                      json.dumps(report_json(result, rows, attribute_names), indent=2) + "\n")
    for i, mask in sorted(result.consensus.masks_by_threshold.items()):
        atomic_write_text(out / f"rfs_masks_T{i}.csv", mask_csv(mask, attribute_names))
