"""Class-level K-fold partition of the seen classes.

Each fold splits the seen classes into pseudo-seen (used for training) and
pseudo-unseen (held out for validation). Pseudo-unseen blocks are contiguous
runs of the class ordering: the first ``n mod K`` folds take ``n // K + 1``
classes, the rest take ``n // K``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import SemanticSpace, VisualSet, ZslBundle
from .errors import (
    DataError,
    DegenerateK,
    DuplicateClassId,
    IndexOutOfRange,
    TooFewClasses,
)

DEFAULT_K = 5


class Fold:
    """One pseudo-seen / pseudo-unseen split of the seen classes.

    Folds cut from a shared class ordering (``Fold.block``) build their
    pseudo-seen tuple on first access, so a plan costs O(n) rather than
    O(n K) to construct.
    """

    __slots__ = ("_seen", "pseudo_unseen", "_order", "_start", "_stop")

    def __init__(self, pseudo_seen, pseudo_unseen):
        self._seen = tuple(pseudo_seen)
        self.pseudo_unseen = tuple(pseudo_unseen)
        self._order = None

    @classmethod
    def block(cls, order: tuple[str, ...], start: int, stop: int) -> "Fold":
        f = cls.__new__(cls)
        f._seen = None
        f.pseudo_unseen = order[start:stop]
        f._order, f._start, f._stop = order, start, stop
        return f

    @property
    def pseudo_seen(self) -> tuple[str, ...]:
        if self._seen is None:
            self._seen = self._order[:self._start] + self._order[self._stop:]
        return self._seen

    def __eq__(self, other):
        if not isinstance(other, Fold):
            return NotImplemented
        return self.pseudo_unseen == other.pseudo_unseen and self.pseudo_seen == other.pseudo_seen

    def __hash__(self):
        return hash((self.pseudo_seen, self.pseudo_unseen))

    def __repr__(self):
        return f"Fold(pseudo_seen={self.pseudo_seen!r}, pseudo_unseen={self.pseudo_unseen!r})"


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]
    k: int
    n: int
    l: int
    r: int
    order: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "folds": [{"pseudo_seen": list(f.pseudo_seen), "pseudo_unseen": list(f.pseudo_unseen)}
                      for f in self.folds],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FoldPlan":
        folds = tuple(Fold(tuple(f["pseudo_seen"]), tuple(f["pseudo_unseen"])) for f in obj["folds"])
        k = int(obj["k"])
        order = tuple(c for f in folds for c in f.pseudo_unseen)
        n = len(order)
        return cls(folds, k, n, n // k if k else 0, n % k if k else 0, order)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def fold_bounds(n: int, k: int) -> list[tuple[int, int]]:
    """Half-open ``[start, stop)`` index ranges of the pseudo-unseen blocks."""
    l, r = divmod(n, k)
    bounds = []
    for fold in range(1, k + 1):
        if fold <= r:
            start = (fold - 1) * (l + 1)
            stop = fold * (l + 1)
        else:
            start = r * (l + 1) + (fold - r - 1) * l
            stop = r * (l + 1) + (fold - r) * l
        bounds.append((start, stop))
    return bounds


def build_fold_plan(seen_classes: Sequence[str], k: int = DEFAULT_K,
                    shuffle_seed: int | None = None) -> FoldPlan:
    classes = [str(c) for c in seen_classes]
    n = len(classes)
    if len(set(classes)) != n:
        raise DuplicateClassId("seen class ids must be unique")
    if k < 2:
        raise DegenerateK(f"k must be at least 2, got {k}")
    if k > n:
        raise TooFewClasses(f"k={k} folds need at least {k} seen classes, have {n}")
    if shuffle_seed is not None:
        perm = np.random.default_rng(shuffle_seed).permutation(n)
        classes = [classes[i] for i in perm]
    order = tuple(classes)
    folds = tuple(Fold.block(order, start, stop) for start, stop in fold_bounds(n, k))
    l, r = divmod(n, k)
    return FoldPlan(folds, k, n, l, r, order)


def verify_fold_plan(plan: FoldPlan) -> list[str]:
    """List every violated fold-plan constraint (empty when the plan is valid)."""
    problems: list[str] = []
    try:
        folds = list(plan.folds)
        k = plan.k
    except Exception as exc:  # verification never raises
        return [f"malformed plan: {exc}"]
    if len(folds) != k:
        problems.append(f"plan declares k={k} but has {len(folds)} folds")
    universe: set[str] = set()
    for f in folds:
        universe.update(f.pseudo_seen)
        universe.update(f.pseudo_unseen)
    n = len(universe)
    if plan.n != n:
        problems.append(f"plan declares n={plan.n} but folds mention {n} classes")
    l, r = divmod(n, k) if k > 0 else (0, 0)

    for i, f in enumerate(folds, start=1):
        ps, pu = set(f.pseudo_seen), set(f.pseudo_unseen)
        both = sorted(ps & pu)
        if both:
            problems.append(f"partition fold {i}: classes both pseudo-seen and pseudo-unseen: {both}")
        missing = sorted(universe - (ps | pu))
        if missing:
            problems.append(f"partition fold {i}: classes absent from fold: {missing}")
        if len(pu) != len(f.pseudo_unseen) or len(ps) != len(f.pseudo_seen):
            problems.append(f"partition fold {i}: duplicated class ids within fold")
        want = l + 1 if i <= r else l
        if len(f.pseudo_unseen) != want:
            problems.append(
                f"balance fold {i}: {len(f.pseudo_unseen)} pseudo-unseen classes, expected {want}")

    covered = set()
    for f in folds:
        covered.update(f.pseudo_unseen)
    uncovered = sorted(universe - covered)
    if uncovered:
        problems.append(f"coverage: never pseudo-unseen: {uncovered}")

    for i in range(len(folds)):
        for j in range(i + 1, len(folds)):
            shared = sorted(set(folds[i].pseudo_unseen) & set(folds[j].pseudo_unseen))
            if shared:
                problems.append(
                    f"pairwise disjointness folds {i + 1} and {j + 1}: shared pseudo-unseen {shared}")
    return problems


@dataclass(frozen=True)
class FoldView:
    visual: VisualSet
    semantics: SemanticSpace


def fold_views(bundle: ZslBundle, plan: FoldPlan, fold_index: int) -> tuple[FoldView, FoldView]:
    """Training view over pseudo-seen classes and validation view over pseudo-unseen ones."""
    if not 0 <= fold_index < len(plan.folds):
        raise IndexOutOfRange(f"fold index {fold_index} outside [0, {len(plan.folds)})")
    fold = plan.folds[fold_index]
    present = set(bundle.train.labels)
    empty = [c for c in fold.pseudo_seen + fold.pseudo_unseen if c not in present]
    if empty:
        raise DataError(f"seen classes without training instances: {empty}")
    train = FoldView(bundle.train.select(fold.pseudo_seen), bundle.semantics.subset(fold.pseudo_seen))
    val = FoldView(bundle.train.select(fold.pseudo_unseen), bundle.semantics.subset(fold.pseudo_unseen))
    return train, val
