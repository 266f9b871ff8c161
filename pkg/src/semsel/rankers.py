"""Attribute rankers fitted on class prototypes (one row per class).

``linear_coef``
    One-vs-rest linear models on column-standardised prototypes; an
    attribute's score is the sum of its absolute coefficients over the
    per-class models. ``hyper["loss"]`` picks ``"hinge"`` (linear SVC,
    default) or ``"logistic"``.
``tree_impurity``
    Mean gini impurity decrease over a forest of unpruned trees, each grown
    on a bootstrap sample of the classes with sqrt(N) candidate features per
    split. Tree ``t`` draws from ``default_rng([seed, t])``.
``random``
    A seeded shuffle; scores are the reciprocal ranks.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import _accel
from .data import SemanticSpace, atomic_write_text
from .errors import ConfigError, ConstantColumnWarning, SingleClass

KINDS = ("linear_coef", "tree_impurity", "random")


@dataclass(frozen=True)
class RankerSpec:
    kind: str = "linear_coef"
    seed: int = 0
    hyper: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown ranker kind {self.kind!r}; expected one of {KINDS}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "hyper": dict(self.hyper)}


@dataclass(frozen=True, eq=False)
class Ranking:
    order: np.ndarray
    scores: np.ndarray

    @classmethod
    def from_scores(cls, scores: np.ndarray) -> "Ranking":
        scores = np.asarray(scores, dtype=np.float64)
        order = np.lexsort((np.arange(scores.size), -scores))
        return cls(order.astype(np.int64), scores)

    def top(self, i: int) -> np.ndarray:
        """Boolean mask of the ``i`` highest-ranked attributes."""
        mask = np.zeros(self.order.size, dtype=bool)
        mask[self.order[:i]] = True
        return mask

    def to_csv(self, attribute_names) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "attribute_index", "attribute_name", "score"])
        for r, j in enumerate(self.order, start=1):
            w.writerow([r, int(j), attribute_names[j], repr(float(self.scores[j]))])
        return buf.getvalue()

    def write_csv(self, path, attribute_names) -> None:
        atomic_write_text(path, self.to_csv(attribute_names))


def _standardise(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = p.mean(axis=0)
    sd = p.std(axis=0)
    const = sd == 0
    z = (p - mu) / np.where(const, 1.0, sd)
    z[:, const] = 0.0
    return z, const


def _linear_scores(p: np.ndarray, seed: int, hyper: dict) -> np.ndarray:
    from sklearn.exceptions import ConvergenceWarning
    from sklearn.linear_model import LogisticRegression
    from sklearn.multiclass import OneVsRestClassifier
    from sklearn.svm import LinearSVC

    z, const = _standardise(p)
    y = np.arange(p.shape[0])
    c = float(hyper.get("C", 1.0))
    loss = hyper.get("loss", "hinge")
    max_iter = int(hyper.get("max_iter", 100000))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if loss == "hinge":
            model = LinearSVC(C=c, loss="hinge", dual=True, random_state=seed, max_iter=max_iter)
            model.fit(z, y)
            coef = model.coef_
        elif loss == "logistic":
            model = OneVsRestClassifier(LogisticRegression(C=c, max_iter=max_iter, random_state=seed))
            model.fit(z, y)
            coef = np.vstack([est.coef_ for est in model.estimators_])
        else:
            raise ConfigError(f"unknown linear loss {loss!r}")
    scores = np.abs(coef).sum(axis=0)
    scores[const] = 0.0
    return scores


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    return 1.0 - float((counts * counts).sum()) / (n * n)


def _grow_tree(x: np.ndarray, y: np.ndarray, n_classes: int, max_features: int,
               max_depth: int | None, rng: np.random.Generator) -> np.ndarray:
    n_root, n_feat = x.shape
    imp = np.zeros(n_feat)
    stack = [(np.arange(n_root), 0)]
    while stack:
        idx, depth = stack.pop()
        yn = y[idx]
        counts = np.bincount(yn, minlength=n_classes)
        if idx.size < 2 or (counts > 0).sum() < 2 or (max_depth is not None and depth >= max_depth):
            continue
        feats = rng.permutation(n_feat)
        xn = x[idx]
        f, thr, child = _accel.best_split(xn, yn, feats, n_classes, max_features)
        if f < 0:
            continue
        imp[f] += idx.size / n_root * (_gini(counts) - child)
        go_left = xn[:, f] <= thr
        stack.append((idx[~go_left], depth + 1))
        stack.append((idx[go_left], depth + 1))
    total = imp.sum()
    return imp / total if total > 0 else imp


def _forest_scores(p: np.ndarray, seed: int, hyper: dict) -> np.ndarray:
    n, n_feat = p.shape
    n_trees = int(hyper.get("n_trees", 200))
    max_depth = hyper.get("max_depth")
    mf = hyper.get("max_features", "sqrt")
    max_features = max(1, int(np.sqrt(n_feat))) if mf == "sqrt" else int(mf)
    bootstrap = bool(hyper.get("bootstrap", True))
    y_all = np.arange(n)
    total = np.zeros(n_feat)
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        total += _grow_tree(p[rows], y_all[rows], n, max_features, max_depth, rng)
    scores = total / n_trees
    s = scores.sum()
    return scores / s if s > 0 else scores


def _random_scores(n_feat: int, seed: int) -> np.ndarray:
    order = np.random.default_rng(seed).permutation(n_feat)
    scores = np.empty(n_feat)
    scores[order] = 1.0 / np.arange(1, n_feat + 1)
    return scores


def rank_attributes(spec: RankerSpec, semantics: SemanticSpace) -> Ranking:
    p = semantics.matrix
    if p.shape[0] < 2:
        raise SingleClass("ranking needs at least two classes")
    const = p.std(axis=0) == 0
    if const.any() and spec.kind != "random":
        warnings.warn(f"{int(const.sum())} constant attribute column(s) scored 0",
                      ConstantColumnWarning, stacklevel=2)
    if spec.kind == "linear_coef":
        scores = _linear_scores(p, spec.seed, spec.hyper)
    elif spec.kind == "tree_impurity":
        scores = _forest_scores(p, spec.seed, spec.hyper)
    else:
        scores = _random_scores(p.shape[1], spec.seed)
    if spec.kind != "random":
        scores = np.where(const, 0.0, scores)
    return Ranking.from_scores(scores)
