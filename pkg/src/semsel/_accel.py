"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba implementations are used when numba imports cleanly and the
environment variable ``SEMSEL_DISABLE_NUMBA`` is unset (or ``0``). Both
variants of every kernel are importable under explicit names so that tests
and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

_DISABLED = os.environ.get("SEMSEL_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by SEMSEL_DISABLE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA


TIE_TOL = 1e-12

# ---------------------------------------------------------------------------
# cosine nearest prototype
# ---------------------------------------------------------------------------

def nearest_cosine_numpy(emb: np.ndarray, protos: np.ndarray) -> np.ndarray:
    """Row-wise argmax of cosine similarity; first index wins ties.

    Similarities within ``TIE_TOL`` of the row maximum count as tied, so
    rescaled copies of a prototype tie regardless of summation order.

    Zero prototypes have similarity 0 (cosine distance 1). A zero embedding
    has similarity 0 to everything and therefore maps to index 0.
    """
    en = np.sqrt(np.einsum("ij,ij->i", emb, emb))
    pn = np.sqrt(np.einsum("ij,ij->i", protos, protos))
    eu = emb / np.where(en > 0, en, 1.0)[:, None]
    pu = protos / np.where(pn > 0, pn, 1.0)[:, None]
    sim = eu @ pu.T
    near_top = sim >= sim.max(axis=1, keepdims=True) - TIE_TOL
    return np.argmax(near_top, axis=1).astype(np.int64)


def _nearest_cosine_loop(emb, protos):
    m, l = emb.shape
    c = protos.shape[0]
    pn = np.empty(c)
    for j in range(c):
        s = 0.0
        for k in range(l):
            s += protos[j, k] * protos[j, k]
        pn[j] = np.sqrt(s)
    out = np.zeros(m, dtype=np.int64)
    sims = np.empty(c)
    for i in range(m):
        s = 0.0
        for k in range(l):
            s += emb[i, k] * emb[i, k]
        en = np.sqrt(s)
        if en == 0.0:
            continue
        best = -np.inf
        for j in range(c):
            if pn[j] > 0.0:
                d = 0.0
                for k in range(l):
                    d += emb[i, k] * protos[j, k]
                sims[j] = d / (en * pn[j])
            else:
                sims[j] = 0.0
            if sims[j] > best:
                best = sims[j]
        for j in range(c):
            if sims[j] >= best - TIE_TOL:
                out[i] = j
                break
    return out


# ---------------------------------------------------------------------------
# pairwise normalised Hamming distance
# ---------------------------------------------------------------------------

def pairwise_hamming_numpy(bits: np.ndarray) -> np.ndarray:
    b = bits.astype(np.float64)
    n = b.shape[1]
    return (b @ (1.0 - b).T + (1.0 - b) @ b.T) / n


def _pairwise_hamming_loop(bits):
    p, n = bits.shape
    out = np.zeros((p, p))
    for i in range(p):
        for j in range(i + 1, p):
            d = 0
            for k in range(n):
                if bits[i, k] != bits[j, k]:
                    d += 1
            out[i, j] = d / n
            out[j, i] = d / n
    return out


# ---------------------------------------------------------------------------
# per-class feature sums
# ---------------------------------------------------------------------------

def class_sums_numpy(x: np.ndarray, codes: np.ndarray, n_classes: int) -> np.ndarray:
    onehot = np.zeros((n_classes, x.shape[0]))
    onehot[codes, np.arange(x.shape[0])] = 1.0
    return onehot @ x


def _class_sums_loop(x, codes, n_classes):
    m, d = x.shape
    out = np.zeros((n_classes, d))
    for i in range(m):
        c = codes[i]
        for k in range(d):
            out[c, k] += x[i, k]
    return out


# ---------------------------------------------------------------------------
# gini split search for one tree node
# ---------------------------------------------------------------------------

def best_split_numpy(xn: np.ndarray, yn: np.ndarray, feats: np.ndarray,
                     n_classes: int, max_features: int):
    """Best gini split over ``feats`` (visited in order).

    Stops after ``max_features`` non-constant features have been examined.
    Returns ``(feature, threshold, weighted_child_impurity)``; feature is -1
    when no valid split exists. Earlier features and earlier thresholds win
    ties.
    """
    n = xn.shape[0]
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), yn] = 1.0
    best_f, best_t, best_imp = -1, 0.0, np.inf
    seen = 0
    for f in feats:
        col = xn[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        seen += 1
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = left[-1] + onehot[order[-1]] - left
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        gl = 1.0 - (left * left).sum(axis=1) / (nl * nl)
        gr = 1.0 - (right * right).sum(axis=1) / (nr * nr)
        imp = (nl * gl + nr * gr) / n
        imp = np.where(valid, imp, np.inf)
        pos = int(np.argmin(imp))
        if imp[pos] < best_imp:
            best_imp = float(imp[pos])
            best_f = int(f)
            best_t = 0.5 * (xs[pos] + xs[pos + 1])
        if seen >= max_features:
            break
    return best_f, best_t, best_imp


def _best_split_loop(xn, yn, feats, n_classes, max_features):
    n = xn.shape[0]
    best_f = -1
    best_t = 0.0
    best_imp = np.inf
    seen = 0
    total = np.zeros(n_classes)
    for i in range(n):
        total[yn[i]] += 1.0
    left = np.zeros(n_classes)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        col = xn[:, f].copy()
        order = np.argsort(col, kind="mergesort")
        constant = True
        for i in range(1, n):
            if col[order[i]] > col[order[i - 1]]:
                constant = False
                break
        if constant:
            continue
        seen += 1
        left[:] = 0.0
        sl = 0.0
        sr = 0.0
        for c in range(n_classes):
            sr += total[c] * total[c]
        for i in range(n - 1):
            c = yn[order[i]]
            lc = left[c]
            rc = total[c] - lc
            sl += 2.0 * lc + 1.0
            sr -= 2.0 * rc - 1.0
            left[c] = lc + 1.0
            lo = col[order[i]]
            hi = col[order[i + 1]]
            if hi > lo:
                nl = i + 1.0
                nr = n - nl
                imp = (nl * (1.0 - sl / (nl * nl)) + nr * (1.0 - sr / (nr * nr))) / n
                if imp < best_imp:
                    best_imp = imp
                    best_f = f
                    best_t = 0.5 * (lo + hi)
        if seen >= max_features:
            break
    return best_f, best_t, best_imp


NUMPY_IMPL = {
    "nearest_cosine": nearest_cosine_numpy,
    "pairwise_hamming": pairwise_hamming_numpy,
    "class_sums": class_sums_numpy,
    "best_split": best_split_numpy,
}
NUMBA_IMPL: dict | None = None

if HAVE_NUMBA:
    nearest_cosine_numba = njit(cache=True)(_nearest_cosine_loop)
    pairwise_hamming_numba = njit(cache=True)(_pairwise_hamming_loop)
    class_sums_numba = njit(cache=True)(_class_sums_loop)
    best_split_numba = njit(cache=True)(_best_split_loop)
    NUMBA_IMPL = {
        "nearest_cosine": nearest_cosine_numba,
        "pairwise_hamming": pairwise_hamming_numba,
        "class_sums": class_sums_numba,
        "best_split": best_split_numba,
    }

# cosine scoring is one BLAS matmul; the compiled loop measured slower, so it stays on numpy
_IMPL = dict(NUMBA_IMPL if USING_NUMBA else NUMPY_IMPL, nearest_cosine=nearest_cosine_numpy)


@contextmanager
def backend(name: str):
    """Temporarily route every kernel to ``"numpy"`` or ``"numba"`` (not thread-safe)."""
    table = {"numpy": NUMPY_IMPL, "numba": NUMBA_IMPL}.get(name, ...)
    if table is ...:
        raise ValueError(f"unknown backend {name!r}")
    if table is None:
        raise RuntimeError("numba is not installed")
    saved = dict(_IMPL)
    _IMPL.update(table)
    try:
        yield
    finally:
        _IMPL.update(saved)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def nearest_cosine(emb, protos) -> np.ndarray:
    return _IMPL["nearest_cosine"](_f64(emb), _f64(protos))


def pairwise_hamming(bits) -> np.ndarray:
    return _IMPL["pairwise_hamming"](np.ascontiguousarray(bits, dtype=np.uint8))


def class_sums(x, codes, n_classes: int) -> np.ndarray:
    return _IMPL["class_sums"](_f64(x), np.ascontiguousarray(codes, dtype=np.int64), int(n_classes))


def best_split(xn, yn, feats, n_classes: int, max_features: int):
    return _IMPL["best_split"](
        _f64(xn),
        np.ascontiguousarray(yn, dtype=np.int64),
        np.ascontiguousarray(feats, dtype=np.int64),
        int(n_classes),
        int(max_features),
    )
