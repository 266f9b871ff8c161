"""Genetic search over binary attribute masks.

The loop follows the classic generational scheme: tournament selection of a
full offspring population, pairwise crossover with probability
``crossover_probability`` per pair, per-individual mutation with probability
``mutation_probability`` (each gene flipped with ``per_gene_mutation_rate``),
evaluation of the individuals whose fitness was invalidated, and wholesale
replacement. There is no elitism inside the population; the best mask ever
evaluated is tracked on the side.

Fitness is the mean pseudo-unseen accuracy of SAE over the folds of a
:class:`~semsel.partition.FoldPlan`, memoised per mask.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _accel
from .data import ZslBundle, as_mask
from .errors import ConfigError, LengthMismatch, SemselError, TooFewIndividuals
from .partition import FoldPlan, fold_views
from .sae import SaeSettings, evaluate_on_unseen, subset_evaluator, training_count
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaConfig:
    pop_size: int = 50
    generations: int = 150
    tournament_size: int = 3
    crossover_probability: float = 0.2
    mutation_probability: float = 0.8
    per_gene_mutation_rate: float | None = None  # None -> 1/N
    init_density: float = 0.5
    seed: int = 0
    use_cv: bool = True
    crossover: str = "uniform"

    def __post_init__(self):
        if self.pop_size < 2:
            raise ConfigError("pop_size must be at least 2")
        if self.tournament_size < 1:
            raise ConfigError("tournament_size must be at least 1")
        if self.generations < 0:
            raise ConfigError("generations must be non-negative")
        for name in ("crossover_probability", "mutation_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.per_gene_mutation_rate is not None and not 0.0 <= self.per_gene_mutation_rate <= 1.0:
            raise ConfigError("per_gene_mutation_rate must lie in [0, 1]")
        if not 0.0 < self.init_density < 1.0:
            raise ConfigError("init_density must lie in (0, 1)")
        if self.crossover not in ("uniform", "two_point"):
            raise ConfigError(f"unknown crossover {self.crossover!r}")

    def gene_rate(self, n: int) -> float:
        return 1.0 / n if self.per_gene_mutation_rate is None else self.per_gene_mutation_rate

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Individual:
    mask: np.ndarray
    fitness: float | None = None


# ---------------------------------------------------------------------------
# fitness
# ---------------------------------------------------------------------------

def mask_key(mask: np.ndarray) -> bytes:
    m = np.asarray(mask, dtype=bool)
    return m.size.to_bytes(4, "little") + np.packbits(m).tobytes()


class FitnessCache:
    """Mask -> fitness memo with hit/miss counters.

    The empty mask is pre-seeded with the penalty fitness 0, so it never
    costs an SAE training and always counts as a hit.
    """

    def __init__(self, n_attributes: int | None = None):
        self._store: dict[bytes, float] = {}
        self.hits = 0
        self.misses = 0
        self.context = None
        if n_attributes is not None:
            self._store[mask_key(np.zeros(n_attributes, dtype=bool))] = 0.0

    def __contains__(self, mask) -> bool:
        return mask_key(mask) in self._store

    def __len__(self) -> int:
        return len(self._store)

    def peek(self, mask) -> float | None:
        return self._store.get(mask_key(mask))

    def get_or_compute(self, mask, compute: Callable[[np.ndarray], float]) -> float:
        key = mask_key(mask)
        if key not in self._store and not np.any(mask):
            self._store[key] = 0.0
        if key in self._store:
            self.hits += 1
            return self._store[key]
        self.misses += 1
        value = float(compute(np.asarray(mask, dtype=bool)))
        self._store[key] = value
        return value

    def batch(self, masks: Sequence[np.ndarray], compute: Callable[[np.ndarray], float],
              threads: int = 1) -> list[float]:
        """Fitness for every mask, computing each distinct uncached mask once.

        Accounting is done in request order, so it does not depend on
        ``threads``.
        """
        keys = [mask_key(m) for m in masks]
        todo: dict[bytes, np.ndarray] = {}
        for key, m in zip(keys, masks):
            if key not in self._store and not np.any(m):
                self._store[key] = 0.0
            if key in self._store or key in todo:
                self.hits += 1
            else:
                self.misses += 1
                todo[key] = np.asarray(m, dtype=bool)
        if todo:
            items = list(todo.items())
            if threads > 1 and len(items) > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    values = list(pool.map(lambda kv: float(compute(kv[1])), items))
            else:
                values = [float(compute(m)) for _, m in items]
            for (key, _), v in zip(items, values):
                self._store[key] = v
        return [self._store[k] for k in keys]


class FoldFitness:
    """Mean pseudo-unseen SAE accuracy of a mask over the folds of a plan.

    With ``use_cv=False`` only the first fold is used (single fixed
    pseudo-seen / pseudo-unseen split). A fold whose SAE solve fails scores 0
    and is recorded in :attr:`diagnostics`; all folds are still attempted, so
    each evaluation costs exactly one training per fold.
    """

    def __init__(self, bundle: ZslBundle, plan: FoldPlan, settings=SaeSettings(),
                 use_cv: bool = True):
        self.settings = SaeSettings.coerce(settings)
        self.n_attributes = bundle.semantics.n_attributes
        folds = range(len(plan.folds)) if use_cv else range(1)
        self.evaluators = []
        for k in folds:
            tr, va = fold_views(bundle, plan, k)
            self.evaluators.append(
                subset_evaluator(tr.semantics, tr.visual, va.semantics, va.visual, self.settings))
        self.diagnostics: list[str] = []

    @property
    def n_folds(self) -> int:
        return len(self.evaluators)

    def fold_scores(self, mask) -> np.ndarray:
        m = as_mask(mask, self.n_attributes)
        if not m.any():
            return np.zeros(self.n_folds)
        out = np.zeros(self.n_folds)
        for i, ev in enumerate(self.evaluators):
            try:
                out[i] = ev.accuracy(m)
            except SemselError as exc:
                self.diagnostics.append(f"fold {i}, mask {np.flatnonzero(m).tolist()}: {exc}")
                out[i] = 0.0
        return out

    def __call__(self, mask) -> float:
        return float(self.fold_scores(mask).mean())


def fitness(mask, bundle: ZslBundle, plan: FoldPlan, lam=SaeSettings(),
            cache: FitnessCache | None = None) -> float:
    """Memoised fold-averaged fitness of one mask.

    The fold evaluators are built on first use and kept on ``cache``.
    """
    if cache is None:
        cache = FitnessCache(bundle.semantics.n_attributes)
    if cache.context is None:
        cache.context = FoldFitness(bundle, plan, lam)
    m = as_mask(mask, bundle.semantics.n_attributes)
    return cache.get_or_compute(m, cache.context)


# ---------------------------------------------------------------------------
# diversity
# ---------------------------------------------------------------------------

def hamming_distance(u, v) -> float:
    u = np.asarray(u, dtype=bool).ravel()
    v = np.asarray(v, dtype=bool).ravel()
    if u.shape != v.shape:
        raise LengthMismatch(f"mask lengths differ: {u.size} vs {v.size}")
    if u.size == 0:
        raise LengthMismatch("masks are empty")
    return float(np.count_nonzero(u != v)) / u.size


def _masks_of(pop) -> np.ndarray:
    return np.array([p.mask if isinstance(p, Individual) else p for p in pop], dtype=np.uint8)


def hamming_matrix(pop) -> np.ndarray:
    """Pairwise normalised Hamming distances (P x P)."""
    return _accel.pairwise_hamming(_masks_of(pop))


def population_diversity(pop) -> float:
    if len(pop) < 2:
        raise TooFewIndividuals("diversity needs at least two individuals")
    d = hamming_matrix(pop)
    iu = np.triu_indices(d.shape[0], k=1)
    return float(d[iu].mean())


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def tournament_select(fits: np.ndarray, k: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` tournament winners; aspirants are drawn with replacement."""
    winners = np.empty(k, dtype=np.int64)
    for i in range(k):
        asp = rng.integers(0, fits.size, size=size)
        winners[i] = asp[np.argmax(fits[asp])]
    return winners


def uniform_crossover(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> None:
    swap = rng.random(a.size) < 0.5
    tmp = a[swap].copy()
    a[swap] = b[swap]
    b[swap] = tmp


def two_point_crossover(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> None:
    n = a.size
    if n < 2:
        return
    p1 = int(rng.integers(1, n + 1))
    p2 = int(rng.integers(1, n))
    if p2 >= p1:
        p2 += 1
    else:
        p1, p2 = p2, p1
    tmp = a[p1:p2].copy()
    a[p1:p2] = b[p1:p2]
    b[p1:p2] = tmp


def flip_mutation(a: np.ndarray, rate: float, rng: np.random.Generator) -> None:
    flips = rng.random(a.size) < rate
    a[flips] = ~a[flips]


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("generation", "best", "mean", "diversity", "cache_hits", "cache_misses",
                 "generation_best", "evaluated")


@dataclass
class GaTrace:
    records: list[dict] = field(default_factory=list)
    best_mask: np.ndarray | None = None
    best_fitness: float = -math.inf
    sae_trainings: int = 0
    seed: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([r["generation"], repr(r["best"]), repr(r["mean"]), repr(r["diversity"]),
                        r["cache_hits"], r["cache_misses"], repr(r["generation_best"]), r["evaluated"]])
        return buf.getvalue()


@dataclass
class GaResult:
    trace: GaTrace
    best_mask: np.ndarray
    best_fitness: float
    final_population: np.ndarray | None = None


def run_ga(bundle: ZslBundle, plan: FoldPlan, config: GaConfig = GaConfig(), lam=SaeSettings(), *,
           fitness_fn: FoldFitness | None = None, cache: FitnessCache | None = None,
           threads: int = 1) -> GaResult:
    n = bundle.semantics.n_attributes
    if fitness_fn is None:
        fitness_fn = FoldFitness(bundle, plan, lam, use_cv=config.use_cv)
    if cache is None:
        cache = FitnessCache(n)
    rng = np.random.default_rng(config.seed)
    gene_rate = config.gene_rate(n)
    hits0, misses0 = cache.hits, cache.misses
    solves0 = training_count()
    trace = GaTrace(seed=config.seed)

    pop = rng.random((config.pop_size, n)) < config.init_density
    fits = np.array(cache.batch(list(pop), fitness_fn, threads))
    evaluated = config.pop_size

    def record(gen: int) -> None:
        nonlocal evaluated
        i = int(np.argmax(fits))
        if fits[i] > trace.best_fitness:
            trace.best_fitness = float(fits[i])
            trace.best_mask = pop[i].copy()
        trace.records.append({
            "generation": gen,
            "best": trace.best_fitness,
            "mean": float(fits.mean()),
            "diversity": population_diversity(list(pop)),
            "cache_hits": cache.hits - hits0,
            "cache_misses": cache.misses - misses0,
            "generation_best": float(fits[i]),
            "evaluated": evaluated,
        })
        evaluated = 0

    record(0)
    cross = uniform_crossover if config.crossover == "uniform" else two_point_crossover
    for gen in range(1, config.generations + 1):
        chosen = tournament_select(fits, config.pop_size, config.tournament_size, rng)
        off = pop[chosen].copy()
        off_fit = fits[chosen].copy()
        valid = np.ones(config.pop_size, dtype=bool)
        for i in range(1, config.pop_size, 2):
            if rng.random() < config.crossover_probability:
                cross(off[i - 1], off[i], rng)
                valid[i - 1] = valid[i] = False
        for i in range(config.pop_size):
            if rng.random() < config.mutation_probability:
                flip_mutation(off[i], gene_rate, rng)
                valid[i] = False
        todo = np.flatnonzero(~valid)
        if todo.size:
            off_fit[todo] = cache.batch([off[i] for i in todo], fitness_fn, threads)
        evaluated = int(todo.size)
        pop, fits = off, off_fit
        record(gen)

    trace.sae_trainings = training_count() - solves0
    return GaResult(trace, trace.best_mask.copy(), trace.best_fitness, pop.copy())


@dataclass
class MultiRunResult:
    results: list[GaResult | None]
    seeds: list[int]
    frequency: np.ndarray
    unseen_accuracy: list[float | None]
    failures: list[str]

    def accuracy_summary(self) -> dict:
        acc = np.array([a for a in self.unseen_accuracy if a is not None], dtype=np.float64)
        if acc.size == 0:
            return {"runs": 0, "mean": None, "std": None, "ci95": None}
        mean = float(acc.mean())
        if acc.size < 2:
            return {"runs": 1, "mean": mean, "std": 0.0, "ci95": [mean, mean]}
        from scipy import stats

        sd = float(acc.std(ddof=1))
        half = float(stats.t.ppf(0.975, acc.size - 1) * sd / math.sqrt(acc.size))
        return {"runs": int(acc.size), "mean": mean, "std": sd, "ci95": [mean - half, mean + half]}


def multi_run(bundle: ZslBundle, plan: FoldPlan, config: GaConfig = GaConfig(), lam=SaeSettings(),
              runs: int = 20, *, master_seed: int | None = None, evaluate_unseen: bool = True,
              threads: int = 1) -> MultiRunResult:
    """Independent GA runs sharing one fold plan and one fitness cache.

    Run ``r`` uses seed ``derive_seed(master_seed, "ga", r)``; ``master_seed``
    defaults to ``config.seed``.
    """
    if runs < 1:
        raise ConfigError("runs must be at least 1")
    settings = SaeSettings.coerce(lam)
    master = config.seed if master_seed is None else master_seed
    fitness_fn = FoldFitness(bundle, plan, settings, use_cv=config.use_cv)
    cache = FitnessCache(bundle.semantics.n_attributes)
    results, seeds, accs, failures = [], [], [], []
    freq = np.zeros(bundle.semantics.n_attributes, dtype=np.int64)
    for r in range(runs):
        seed = derive_seed(master, "ga", r)
        seeds.append(seed)
        cfg = GaConfig(**{**asdict(config), "seed": seed})
        try:
            res = run_ga(bundle, plan, cfg, settings, fitness_fn=fitness_fn, cache=cache, threads=threads)
        except SemselError as exc:
            log.warning("GA run %d failed: %s", r, exc)
            failures.append(f"run {r}: {exc}")
            results.append(None)
            accs.append(None)
            continue
        results.append(res)
        freq += res.best_mask
        acc = None
        if evaluate_unseen:
            try:
                acc = evaluate_on_unseen(bundle, res.best_mask, settings) if res.best_mask.any() else 0.0
            except SemselError as exc:
                failures.append(f"run {r} evaluation: {exc}")
        accs.append(acc)
    return MultiRunResult(results, seeds, freq, accs, failures)
