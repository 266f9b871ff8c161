from __future__ import annotations

import json

import numpy as np
import pytest

from semsel.data import load_bundle
from semsel.errors import InvalidSpec, TooManyAttributes
from semsel.ga import FitnessCache, FoldFitness
from semsel.partition import build_fold_plan
from semsel.synthgen import (
    SynthSpec,
    exhaustive_best_mask,
    generate,
    planted_prototypes,
    write_synth,
)


def test_shapes_and_truth():
    spec = SynthSpec(seed=1)
    bundle, truth = generate(spec)
    assert bundle.semantics.n_attributes == 16 and truth.sum() == 4
    assert len(bundle.split.seen) == 8 and len(bundle.split.unseen) == 4
    assert bundle.train.n_instances == 8 * 20 and bundle.train.dim == 32


def test_seeded():
    a, ta = generate(SynthSpec(seed=2))
    b, tb = generate(SynthSpec(seed=2))
    c, _ = generate(SynthSpec(seed=3))
    assert a == b and np.array_equal(ta, tb)
    assert a.identity_hash() != c.identity_hash()


def test_features_ignore_noise_attributes():
    # with zero noise the features are an exact linear function of the relevant columns
    bundle, truth = generate(SynthSpec(seed=4, noise_scale=0.0, n_seen=10))
    codes = bundle.train.codes(bundle.semantics)
    rel = bundle.semantics.matrix[codes][:, truth]
    coef, *_ = np.linalg.lstsq(rel, bundle.train.features, rcond=None)
    np.testing.assert_allclose(rel @ coef, bundle.train.features, atol=1e-4)


def test_noise_columns_shared_within_groups():
    bundle, truth = generate(SynthSpec(seed=5, group_size=2))
    noise = bundle.semantics.matrix[:, ~truth]
    assert len(np.unique(noise, axis=0)) == 12 // 2


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        SynthSpec(n_seen=0)
    with pytest.raises(InvalidSpec):
        SynthSpec.from_json({"bogus": 1})


def test_write_synth(tmp_path):
    spec = SynthSpec(seed=6)
    bundle, truth = write_synth(spec, tmp_path)
    assert load_bundle(tmp_path) == bundle
    rows = (tmp_path / "ground_truth.csv").read_text().splitlines()
    assert rows[0] == "attribute_index,attribute_name,relevant"
    assert sum(int(r.split(",")[2]) for r in rows[1:]) == truth.sum()
    assert SynthSpec.from_json(json.loads((tmp_path / "synth_spec.json").read_text())) == spec


def test_planted_prototypes_twins():
    sem, j = planted_prototypes(6, 10, 0)
    m = sem.matrix
    others = np.delete(m, j, axis=1)
    np.testing.assert_array_equal(others[0], others[1])
    assert len(np.unique(m[:, j])) == 6


def test_exhaustive_oracle_against_direct_enumeration():
    bundle, _ = generate(SynthSpec(seed=7, n_relevant=2, n_noise=4))
    plan = build_fold_plan(bundle.split.seen, 5)
    fit = FoldFitness(bundle, plan)
    cache = FitnessCache(6)
    mask, best = exhaustive_best_mask(bundle, plan, fitness_fn=fit, cache=cache)
    scores = {}
    for code in range(1, 64):
        m = np.array([(code >> b) & 1 for b in range(6)], bool)
        scores[tuple(m.astype(int))] = cache.peek(m)
    top = max(scores.values())
    assert best == top
    ties = [k for k, v in scores.items() if v == top]
    fewest = min(sum(k) for k in ties)
    assert tuple(mask.astype(int)) == min(k for k in ties if sum(k) == fewest)


def test_exhaustive_limit():
    bundle, _ = generate(SynthSpec(n_noise=14))
    plan = build_fold_plan(bundle.split.seen, 5)
    with pytest.raises(TooManyAttributes):
        exhaustive_best_mask(bundle, plan)
