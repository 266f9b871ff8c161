"""Time the numba and numpy kernels side by side, plus two end-to-end paths.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel runs once before timing so numba compilation is excluded.
Outputs agree to 1e-12 before any timing is reported.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from semsel import _accel
from semsel.ga import FoldFitness
from semsel.partition import build_fold_plan
from semsel.rankers import RankerSpec, rank_attributes
from semsel.synthgen import SynthSpec, generate


def kernel_cases(rng: np.random.Generator, scale: int):
    emb = rng.normal(size=(2000 * scale, 85))
    protos = rng.normal(size=(10, 85))
    bits = (rng.random((50 * scale, 85)) < 0.5).astype(np.uint8)
    x = rng.normal(size=(5000 * scale, 64))
    codes = rng.integers(0, 40, size=x.shape[0])
    xn = rng.normal(size=(40, 85))
    yn = np.arange(40)
    feats = rng.permutation(85)
    return {
        "nearest_cosine": (emb, protos),
        "pairwise_hamming": (bits,),
        "class_sums": (x, codes, 40),
        "best_split": (xn, yn, feats, 40, 9),
    }


def best_of(fn, repeat: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def check_agreement(name, a, b) -> None:
    if isinstance(a, tuple):
        ok = a[0] == b[0] and abs(a[1] - b[1]) <= 1e-12 and abs(a[2] - b[2]) <= 1e-12
    else:
        ok = np.allclose(a, b, rtol=0, atol=1e-12)
    if not ok:
        raise SystemExit(f"{name}: numba and numpy disagree")


def end_to_end(repeat: int) -> list[tuple[str, float, float]]:
    bundle, _ = generate(SynthSpec(n_seen=20, n_unseen=10, n_noise=60))
    plan = build_fold_plan(bundle.split.seen, 5)
    rng = np.random.default_rng(1)
    masks = rng.random((20, bundle.semantics.n_attributes)) < 0.5
    fit = FoldFitness(bundle, plan)
    protos = bundle.seen_semantics
    spec = RankerSpec("tree_impurity", 0, {"n_trees": 50})
    rows = []
    for label, fn in (("fitness x20", lambda: [fit(m) for m in masks]),
                      ("forest ranking (50 trees)", lambda: rank_attributes(spec, protos))):
        times = {}
        for b in ("numpy", "numba"):
            with _accel.backend(b):
                fn()
                times[b] = best_of(fn, repeat)
        rows.append((label, times["numpy"], times["numba"]))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args()
    if _accel.NUMBA_IMPL is None:
        raise SystemExit("numba unavailable (or disabled by SEMSEL_DISABLE_NUMBA); nothing to compare")

    rows = []
    for name, inputs in kernel_cases(np.random.default_rng(0), 1 if args.quick else 4).items():
        f_np, f_nb = _accel.NUMPY_IMPL[name], _accel.NUMBA_IMPL[name]
        check_agreement(name, f_np(*inputs), f_nb(*inputs))
        rows.append((name, best_of(lambda: f_np(*inputs), args.repeat),
                     best_of(lambda: f_nb(*inputs), args.repeat)))
    rows += end_to_end(args.repeat)

    print(f"{'case':<28}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, t_np, t_nb in rows:
        print(f"{name:<28}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
