"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a PASS/FAIL line that pytest prints in an
"acceptance criteria" section at the end of the run.
Criterion 10 needs real benchmark features and runs only when
``SEMSEL_AWA2_BUNDLE`` points at a bundle directory.
"""

from __future__ import annotations

import filecmp
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from semsel import cli
from semsel.data import SemanticSpace, VisualSet, load_bundle
from semsel.ga import (
    FitnessCache,
    FoldFitness,
    GaConfig,
    hamming_distance,
    population_diversity,
    run_ga,
)
from semsel.partition import build_fold_plan, verify_fold_plan
from semsel.rankers import RankerSpec
from semsel.rfs import best_threshold, evaluate_thresholds, run_rfs
from semsel.sae import (
    evaluate_on_unseen,
    objective_gradient,
    solve_sylvester,
    train_sae,
)
from semsel.synthgen import SynthSpec, exhaustive_best_mask, generate

SEEDS = range(20)


def record(crit: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {crit}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. partition
# ---------------------------------------------------------------------------

def test_criterion_01_partition():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(2, 801))
        k = int(rng.integers(2, n + 1))
        ids = tuple(f"y{i}" for i in range(n))
        plan = build_fold_plan(ids, k)
        l, r = divmod(n, k)
        sizes = [len(f.pseudo_unseen) for f in plan.folds]
        union = [c for f in plan.folds for c in f.pseudo_unseen]
        ok = max(sizes) - min(sizes) <= 1
        ok &= len(union) == n and set(union) == set(ids)  # coverage + pairwise disjointness
        for i, f in enumerate(plan.folds, start=1):
            start = (i - 1) * l + min(i - 1, r)
            size = l + 1 if i <= r else l
            ok &= f.pseudo_unseen == ids[start:start + size]
        if n <= 200:
            # full pseudo-seen complement check is O(nK); run it on the smaller plans
            for f in plan.folds:
                held = set(f.pseudo_unseen)
                ok &= f.pseudo_seen == tuple(c for c in ids if c not in held)
            ok &= verify_fold_plan(plan) == []
        bad += not ok
    dt = time.perf_counter() - t0
    record("1", bad == 0 and dt < 5.0, f"1000 random (n,K): {bad} violations, {dt:.2f}s (limit 5s)")


# ---------------------------------------------------------------------------
# 2-3. SAE solver and optimality
# ---------------------------------------------------------------------------

def test_criterion_02_sylvester():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        l, d = (int(v) for v in rng.integers(1, 129, size=2))
        qa, qb = rng.normal(size=(l, l)), rng.normal(size=(d, d))
        a, b = qa @ qa.T, qb @ qb.T
        c = rng.normal(size=(l, d))
        w = solve_sylvester(a, b, c)
        worst = max(worst, np.linalg.norm(a @ w + w @ b - c) / np.linalg.norm(c))
    ident = np.abs(solve_sylvester(np.eye(2), np.eye(2), 2 * np.eye(2)) - np.eye(2)).max()
    dt = time.perf_counter() - t0
    record("2", worst <= 1e-8 and ident <= 1e-12 and dt < 30,
           f"worst residual {worst:.2e} (<=1e-8), identity error {ident:.1e} (<=1e-12), {dt:.1f}s (<30s)")


def test_criterion_03_sae_optimality():
    rng = np.random.default_rng(11)
    worst = 0.0
    for t in range(50):
        lam = 1.0 if t % 2 == 0 else 500000.0
        n_cls, n_attr, dim = (int(v) for v in rng.integers(3, 9, size=3))
        per = int(rng.integers(1, 6))
        protos = rng.normal(size=(n_cls, n_attr))
        labels = np.repeat(np.arange(n_cls), per)
        x = rng.normal(size=(labels.size, dim))
        ids = [f"k{i}" for i in range(n_cls)]
        sem = SemanticSpace(ids, [f"a{j}" for j in range(n_attr)], protos)
        w = train_sae(sem, VisualSet(x, [ids[i] for i in labels]), lam).W
        s, xm = protos[labels].T, x.T
        g = objective_gradient(w, s, xm, lam)
        worst = max(worst, np.linalg.norm(g) / np.linalg.norm((1 + lam) * s @ xm.T))
    record("3", worst <= 1e-6, f"worst gradient norm ratio {worst:.2e} over 50 problems (<=1e-6)")


# ---------------------------------------------------------------------------
# 4. Hamming / diversity
# ---------------------------------------------------------------------------

def test_criterion_04_hamming():
    u = np.array([1, 0, 1, 0])
    got = (hamming_distance(u, u), hamming_distance(u, 1 - u),
           hamming_distance([1, 0, 1, 0], [1, 1, 0, 0]),
           population_diversity([np.array(m) for m in ([1, 1], [1, 0], [0, 1])]))
    want = (0.0, 1.0, 0.5, 2 / 3)
    record("4", got == want, f"got {got}, expected {want}")


# ---------------------------------------------------------------------------
# 5 and 11. GA vs exhaustive oracle, evaluation bookkeeping
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def oracle_runs():
    out = []
    t0 = time.perf_counter()
    for s in range(10):
        bundle, _ = generate(SynthSpec(seed=s, n_relevant=3, n_noise=7))
        plan = build_fold_plan(bundle.split.seen, 5)
        fit = FoldFitness(bundle, plan)
        ga = run_ga(bundle, plan, GaConfig(seed=s), fitness_fn=fit, cache=FitnessCache(10))
        _, best = exhaustive_best_mask(bundle, plan, fitness_fn=fit, cache=FitnessCache(10))
        out.append((ga, best, plan.k))
    return out, time.perf_counter() - t0


def test_criterion_05_ga_vs_oracle(oracle_runs):
    runs, dt = oracle_runs
    gaps = [best - ga.best_fitness for ga, best, _ in runs]
    close = sum(g <= 0.02 for g in gaps)
    record("5", close >= 8 and dt < 600,
           f"GA within 0.02 of the exhaustive optimum on {close}/10 bundles (>=8); "
           f"max gap {max(gaps):.4f}; {dt:.0f}s (<600s)")


def test_criterion_11_bookkeeping(oracle_runs):
    runs, _ = oracle_runs
    bundle, _ = generate(SynthSpec(seed=0))
    plan = build_fold_plan(bundle.split.seen, 5)
    runs = [r[0] for r in runs] + [run_ga(bundle, plan, GaConfig(seed=0))]
    exact = all(r.trace.sae_trainings == 5 * r.trace.records[-1]["cache_misses"] for r in runs)
    misses = [r.trace.records[-1]["cache_misses"] for r in runs]
    record("11", exact and max(misses) <= 50 * 151,
           f"#SAE == K x misses in {len(runs)}/{len(runs)} runs: {exact}; "
           f"misses {min(misses)}..{max(misses)} (<= 7550)")


# ---------------------------------------------------------------------------
# 6 and 8. default synthetic spec, 20 seeds
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def default_spec_runs():
    rows = []
    for s in SEEDS:
        bundle, truth = generate(SynthSpec(seed=s))
        plan = build_fold_plan(bundle.split.seen, 5)
        rfs = best_threshold(evaluate_thresholds(bundle, run_rfs(bundle, plan, RankerSpec("linear_coef", s))))
        rnd = [best_threshold(evaluate_thresholds(bundle, run_rfs(bundle, plan, RankerSpec("random", 1000 + r))))
               for r in range(20)]
        fitness_cv = FoldFitness(bundle, plan)
        ga = run_ga(bundle, plan, GaConfig(seed=s), fitness_fn=fitness_cv)
        nocv = run_ga(bundle, plan, GaConfig(seed=s, use_cv=False))
        rows.append({
            "rfs": rfs["unseen_accuracy"],
            "random_median": float(np.median([r["unseen_accuracy"] for r in rnd])),
            "ga": evaluate_on_unseen(bundle, ga.best_mask),
            "ga_nocv": evaluate_on_unseen(bundle, nocv.best_mask),
        })
    return rows


def test_criterion_06_rfs_beats_random(default_spec_runs):
    wins = sum(r["rfs"] >= r["random_median"] for r in default_spec_runs)
    record("6", wins >= 16, f"linear-ranking RFS >= random-ranking median in {wins}/20 seeds (>=16)")


def test_criterion_08_cv_ablation(default_spec_runs):
    diff = float(np.mean([r["ga"] - r["ga_nocv"] for r in default_spec_runs]))
    record("8", diff >= 0, f"mean paired unseen-accuracy difference GA - GA_noCV = {diff:+.4f} (>=0)")


# ---------------------------------------------------------------------------
# 7. planted noise, selection vs baseline
# ---------------------------------------------------------------------------

def test_criterion_07_selection_beats_baseline():
    beat_rfs = beat_ga = rec_rfs = rec_ga = 0
    for s in SEEDS:
        bundle, truth = generate(SynthSpec(seed=s, n_seen=20, n_unseen=10, noise_scale=1.0))
        plan = build_fold_plan(bundle.split.seen, 5)
        base = evaluate_on_unseen(bundle, None)
        res = run_rfs(bundle, plan, RankerSpec("linear_coef", s))
        bt = best_threshold(evaluate_thresholds(bundle, res))
        rfs_mask = res.consensus.masks_by_threshold[bt["threshold"]]
        ga = run_ga(bundle, plan, GaConfig(seed=s))
        beat_rfs += bt["unseen_accuracy"] > base
        beat_ga += evaluate_on_unseen(bundle, ga.best_mask) > base
        rec_rfs += int((rfs_mask & truth).sum()) >= 3
        rec_ga += int((ga.best_mask & truth).sum()) >= 3
    ok = min(beat_rfs, beat_ga, rec_rfs, rec_ga) >= 16
    record("7", ok, f"beat baseline RFS {beat_rfs}/20, GA {beat_ga}/20; "
                    f">=3 of 4 planted recovered RFS {rec_rfs}/20, GA {rec_ga}/20 (each >=16)")


# ---------------------------------------------------------------------------
# 9. determinism of every subcommand
# ---------------------------------------------------------------------------

def _same_tree(a: Path, b: Path) -> list[str]:
    """Files that differ or exist on one side only; timing.json is wall-clock by design."""
    names = {p.name for p in a.iterdir()} | {p.name for p in b.iterdir()}
    names.discard("timing.json")
    return sorted(n for n in names
                  if not ((a / n).exists() and (b / n).exists() and filecmp.cmp(a / n, b / n, shallow=False)))


def test_criterion_09_determinism(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"seed": 5, "n_relevant": 3, "n_noise": 5}))
    diffs = {}
    for rep in ("1", "2"):
        assert cli.main(["synth", "--spec", str(spec), "--out", str(tmp_path / f"synth{rep}")]) == 0
    diffs["synth"] = _same_tree(tmp_path / "synth1", tmp_path / "synth2")
    bundle = str(tmp_path / "synth1")

    ga_cfg = tmp_path / "ga.json"
    ga_cfg.write_text(json.dumps({"runs": 2, "ga": {"pop_size": 20, "generations": 10}}))
    first = {
        "partition": ["partition", "--bundle", bundle, "--shuffle-classes"],
        "baseline": ["baseline", "--bundle", bundle],
        "rfs": ["rfs", "--bundle", bundle, "--ranker", "tree_impurity"],
        "ga": ["ga", "--bundle", bundle, "--config", str(ga_cfg), "--threads", "2"],
        "oracle": ["oracle", "--bundle", bundle],
    }
    for name, argv in first.items():
        a, b = tmp_path / f"{name}1", tmp_path / f"{name}2"
        assert cli.main([*argv, "--out", str(a)]) == 0
        if name == "partition":
            assert cli.main([*argv, "--out", str(b)]) == 0
        else:
            assert cli.main([name, "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
        diffs[name] = _same_tree(a, b)

    reports = [str(tmp_path / f"{m}1") for m in ("baseline", "rfs", "ga", "oracle")]
    for rep in ("1", "2"):
        assert cli.main(["compare", *reports, "--out", str(tmp_path / f"cmp{rep}.csv")]) == 0
    diffs["compare"] = [] if filecmp.cmp(tmp_path / "cmp1.csv", tmp_path / "cmp2.csv", shallow=False) else ["cmp"]

    bad = {k: v for k, v in diffs.items() if v}
    record("9", not bad, f"{len(diffs)} subcommands re-run from their manifests; differing files: {bad or 'none'}")


# ---------------------------------------------------------------------------
# 10. paper-scale baseline (conditional)
# ---------------------------------------------------------------------------

AWA2 = os.environ.get("SEMSEL_AWA2_BUNDLE")


@pytest.mark.skipif(not AWA2, reason="set SEMSEL_AWA2_BUNDLE to a conforming AWA2 bundle to run")
def test_criterion_10_awa2_baseline():
    acc = 100 * evaluate_on_unseen(load_bundle(AWA2), None)
    record("10", abs(acc - 40.36) <= 1.0, f"AWA2 baseline unseen accuracy {acc:.2f} (40.36 +/- 1.0)")


def test_criterion_10_reported_when_skipped():
    if not AWA2:
        ACCEPTANCE_LINES.append("SKIP  criterion 10: needs SEMSEL_AWA2_BUNDLE (ResNet-101 AWA2 features)")
