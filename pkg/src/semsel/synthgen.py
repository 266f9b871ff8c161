"""Synthetic ZSL bundles with planted attribute relevance, and a brute-force oracle.

Relevant attributes take independent values per class and fully determine
the visual features (a fixed random linear map plus Gaussian noise). Noise
attributes are drawn per *group* of ``group_size`` classes: classes in the
same group share their noise values, so noise columns never tell group mates
apart and carry nothing the visual features could explain. Attribute columns
are shuffled so the planted positions are random.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import (
    ClassSplit,
    SemanticSpace,
    VisualSet,
    ZslBundle,
    atomic_write_text,
    save_bundle,
    to_float32_exact,
)
from .errors import InvalidSpec, TooManyAttributes
from .partition import FoldPlan
from .sae import SaeSettings

MAX_EXHAUSTIVE = 16


@dataclass(frozen=True)
class SynthSpec:
    n_seen: int = 8
    n_unseen: int = 4
    n_relevant: int = 4
    n_noise: int = 12
    visual_dim: int = 32
    instances_per_class: int = 20
    noise_scale: float = 1.0
    seed: int = 0
    group_size: int = 2

    def __post_init__(self):
        for name in ("n_seen", "n_unseen", "n_relevant", "visual_dim", "instances_per_class", "group_size"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be at least 1")
        if self.n_noise < 0:
            raise InvalidSpec("n_noise must be non-negative")
        if self.noise_scale < 0:
            raise InvalidSpec("noise_scale must be non-negative")

    @property
    def n_attributes(self) -> int:
        return self.n_relevant + self.n_noise

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSpec":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"unknown synth spec fields: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None

    def to_json(self) -> dict:
        return asdict(self)


def generate(spec: SynthSpec) -> tuple[ZslBundle, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    n_cls = spec.n_seen + spec.n_unseen
    n_attr = spec.n_attributes

    relevant = rng.normal(size=(n_cls, spec.n_relevant))
    group = rng.permutation(n_cls) // spec.group_size
    noise_vals = rng.normal(size=(group.max() + 1, spec.n_noise))
    noise = noise_vals[group]
    cols = rng.permutation(n_attr)
    protos = np.empty((n_cls, n_attr))
    protos[:, cols[:spec.n_relevant]] = relevant
    protos[:, cols[spec.n_relevant:]] = noise
    truth = np.zeros(n_attr, dtype=bool)
    truth[cols[:spec.n_relevant]] = True

    proj = rng.normal(size=(spec.n_relevant, spec.visual_dim))
    labels = np.repeat(np.arange(n_cls), spec.instances_per_class)
    feats = relevant[labels] @ proj
    feats = feats + spec.noise_scale * rng.normal(size=feats.shape)

    ids = [f"c{i:03d}" for i in range(n_cls)]
    names = [f"attr{j:03d}" for j in range(n_attr)]
    semantics = SemanticSpace(ids, names, to_float32_exact(protos))
    feats = to_float32_exact(feats)
    is_seen = labels < spec.n_seen
    train = VisualSet(feats[is_seen], [ids[i] for i in labels[is_seen]])
    test = VisualSet(feats[~is_seen], [ids[i] for i in labels[~is_seen]])
    split = ClassSplit(ids[:spec.n_seen], ids[spec.n_seen:])
    return ZslBundle(semantics, train, test, split), truth


def planted_prototypes(n_classes: int, n_attributes: int, seed: int) -> tuple[SemanticSpace, int]:
    """Prototypes in which one attribute alone separates classes.

    Classes come in pairs that share every value except the planted
    attribute, which is drawn independently per class.
    """
    if n_classes < 2 or n_attributes < 1:
        raise InvalidSpec("need at least two classes and one attribute")
    rng = np.random.default_rng(seed)
    j = int(rng.integers(n_attributes))
    shared = rng.normal(size=((n_classes + 1) // 2, n_attributes))
    p = np.repeat(shared, 2, axis=0)[:n_classes]
    p[:, j] = rng.normal(size=n_classes)
    sem = SemanticSpace([f"c{i:03d}" for i in range(n_classes)],
                        [f"attr{k:03d}" for k in range(n_attributes)], p)
    return sem, j


def write_synth(spec: SynthSpec, out_dir) -> tuple[ZslBundle, np.ndarray]:
    bundle, truth = generate(spec)
    out = Path(out_dir)
    save_bundle(bundle, out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["attribute_index", "attribute_name", "relevant"])
    for j, (name, t) in enumerate(zip(bundle.semantics.attribute_names, truth)):
        w.writerow([j, name, int(t)])
    atomic_write_text(out / "ground_truth.csv", buf.getvalue())
    atomic_write_text(out / "synth_spec.json", json.dumps(spec.to_json(), indent=2) + "\n")
    return bundle, truth


def _better(f: float, m: np.ndarray, best_f: float, best_m: np.ndarray | None) -> bool:
    if best_m is None or f > best_f:
        return True
    if f < best_f:
        return False
    c, bc = int(m.sum()), int(best_m.sum())
    if c != bc:
        return c < bc
    # lexicographic on the bit tuple: the first differing bit decides
    diff = np.flatnonzero(m != best_m)
    return bool(not m[diff[0]])


def exhaustive_best_mask(bundle: ZslBundle, plan: FoldPlan, lam=SaeSettings(),
                         max_n: int = MAX_EXHAUSTIVE, *, fitness_fn=None,
                         cache=None) -> tuple[np.ndarray, float]:
    """Best non-empty mask over all ``2^N - 1`` candidates.

    Ties go to fewer attributes, then to the lexicographically smallest bit
    vector. Uses the GA's fitness function (and cache, when given).
    """
    from .ga import FitnessCache, FoldFitness

    n = bundle.semantics.n_attributes
    if max_n > MAX_EXHAUSTIVE:
        raise TooManyAttributes(f"max_n may not exceed {MAX_EXHAUSTIVE}")
    if n > max_n:
        raise TooManyAttributes(f"{n} attributes exceed the exhaustive limit {max_n}")
    if fitness_fn is None:
        fitness_fn = FoldFitness(bundle, plan, lam)
    if cache is None:
        cache = FitnessCache(n)
    bits = np.arange(n)
    best_f, best_m = -np.inf, None
    for code in range(1, 1 << n):
        m = ((code >> bits) & 1).astype(bool)
        f = cache.get_or_compute(m, fitness_fn)
        if _better(f, m, best_f, best_m):
            best_f, best_m = f, m
    return best_m, float(best_f)
