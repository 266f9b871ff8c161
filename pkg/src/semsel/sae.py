"""Semantic Autoencoder: closed-form training and cosine nearest-prototype prediction.

Training minimises ``||X - W^T S||^2 + lam * ||W X - S||^2`` where the columns
of ``X`` are instance features and the columns of ``S`` the prototypes of the
instance labels. The stationarity condition is the Sylvester equation

    (S S^T) W + W (lam X X^T) = (1 + lam) S X^T

which is solved through the eigendecompositions of its two symmetric PSD
coefficient matrices.
"""

from __future__ import annotations

import json
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .data import (
    SemanticSpace,
    VisualSet,
    as_mask,
    atomic_write_text,
    normalize_rows,
    read_matrix_bin,
    write_matrix_bin,
)
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyEvalSet,
    EmptyMask,
    MissingFile,
    NonFiniteValue,
    NonSymmetricInput,
    SingularPencil,
    ZeroEmbeddingWarning,
)

DEFAULT_LAMBDA = 500000.0
RIDGE_FACTOR = 1e-10
SYMMETRY_RTOL = 1e-8
NEGLIGIBLE_RTOL = 1e-10
REFINE_SWEEPS = 2


class _Counter:
    def __init__(self):
        self._lock = threading.Lock()
        self._n = 0

    def bump(self) -> None:
        with self._lock:
            self._n += 1

    @property
    def value(self) -> int:
        return self._n


_SOLVES = _Counter()


def training_count() -> int:
    """Number of Sylvester solves (SAE trainings) performed in this process."""
    return _SOLVES.value


# ---------------------------------------------------------------------------
# Sylvester solver
# ---------------------------------------------------------------------------

def _check_symmetric(m: np.ndarray, name: str) -> None:
    scale = np.abs(m).max(initial=0.0)
    if np.abs(m - m.T).max(initial=0.0) > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
        raise NonSymmetricInput(f"{name} is not symmetric")


def sym_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric PSD matrix; round-off negatives clipped to 0."""
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return np.clip(vals, 0.0, None), vecs


def _solve_rotated(la: np.ndarray, lb: np.ndarray, rhs: np.ndarray, c_norm: float) -> np.ndarray:
    """Divide the rotated right-hand side by the eigenvalue sums.

    ``rhs`` is ``U^T C V``. Entries whose eigenvalue sum is numerically zero are
    set to zero when the matching ``rhs`` entry is negligible (minimum-norm
    solution) and raise :class:`SingularPencil` otherwise.
    """
    _SOLVES.bump()
    l, d = rhs.shape
    top_a = la.max(initial=0.0)
    top_b = lb.max(initial=0.0)
    ridge = RIDGE_FACTOR * (la.sum() / max(l, 1) + lb.sum() / max(d, 1))
    floor = 64 * np.finfo(float).eps * (top_a + top_b)
    den = la[:, None] + lb[None, :]
    singular = den <= floor
    if singular.any():
        tol = NEGLIGIBLE_RTOL * c_norm
        if np.abs(rhs[singular]).max(initial=0.0) > tol:
            raise SingularPencil("eigenvalue sums vanish where the right-hand side does not")
        rhs = np.where(singular, 0.0, rhs)
        den = np.where(singular, 0.0, den)
    # iterated Tikhonov: the ridge keeps tiny sums stable, the sweeps remove its bias
    shifted = np.where(singular, 1.0, den + ridge)
    out = rhs / shifted
    for _ in range(REFINE_SWEEPS):
        out += (rhs - den * out) / shifted
    return out


def solve_sylvester(a: np.ndarray, b: np.ndarray, c: np.ndarray, *,
                    b_eig: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Solve ``A W + W B = C`` for symmetric PSD ``A`` (L x L) and ``B`` (D x D).

    ``b_eig`` may carry a precomputed ``(values, vectors)`` decomposition of B,
    which lets repeated solves against one visual Gram matrix skip the D x D
    eigendecomposition.
    """
    a = np.asarray(a, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or c.ndim != 2 or c.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"incompatible shapes A{a.shape} C{c.shape}")
    _check_symmetric(a, "A")
    if b_eig is None:
        b = np.asarray(b, dtype=np.float64)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise DimensionMismatch(f"B must be square, got {b.shape}")
        _check_symmetric(b, "B")
        b_eig = sym_eig(b)
    lb, v = b_eig
    if c.shape[1] != v.shape[0]:
        raise DimensionMismatch(f"C has {c.shape[1]} columns, B is {v.shape[0]}x{v.shape[0]}")
    la, u = sym_eig(a)
    m = _solve_rotated(la, lb, u.T @ c @ v, float(np.linalg.norm(c)))
    return u @ m @ v.T


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SaeModel:
    W: np.ndarray
    lam: float
    attribute_names: tuple[str, ...] = ()
    normalize_features: bool = False

    def __post_init__(self):
        w = np.array(self.W, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "W", w)
        if not np.isfinite(w).all():
            raise NonFiniteValue("SAE projection has non-finite entries")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")

    def encode(self, features: np.ndarray) -> np.ndarray:
        """Semantic embeddings (rows) for feature rows."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.normalize_features:
            x = normalize_rows(x)
        return x @ self.W.T

    def save(self, path) -> None:
        path = Path(path)
        names = self.attribute_names or tuple(f"a{i}" for i in range(self.W.shape[0]))
        write_matrix_bin(path, self.W, names)
        sidecar = {"lambda": self.lam, "normalize_features": self.normalize_features}
        atomic_write_text(path.with_suffix(path.suffix + ".json"), json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SaeModel":
        path = Path(path)
        w, names = read_matrix_bin(path)
        side = path.with_suffix(path.suffix + ".json")
        if not side.exists():
            raise MissingFile(str(side))
        meta = json.loads(side.read_text(encoding="utf-8"))
        return cls(w, float(meta["lambda"]), tuple(names), bool(meta.get("normalize_features", False)))


def _prepare_semantics(semantics: SemanticSpace, normalize_prototypes: bool) -> np.ndarray:
    p = semantics.matrix
    return normalize_rows(p) if normalize_prototypes else p


def train_sae(semantics: SemanticSpace, visual: VisualSet, lam: float = DEFAULT_LAMBDA, *,
              normalize_prototypes: bool = False, normalize_features: bool = False) -> SaeModel:
    """Fit the tied-weight projection on ``visual`` with per-instance prototypes.

    The instance-level matrices are never materialised: ``S S^T`` and ``S X^T``
    are accumulated per class from label counts and per-class feature sums.
    """
    if lam <= 0:
        raise ConfigError("lambda must be positive")
    codes = visual.codes(semantics)
    p = _prepare_semantics(semantics, normalize_prototypes)
    x = visual.features
    if normalize_features:
        x = normalize_rows(x)
    counts = np.bincount(codes, minlength=semantics.n_classes).astype(np.float64)
    g = _accel.class_sums(x, codes, semantics.n_classes)
    a = p.T @ (counts[:, None] * p)
    c = (1.0 + lam) * (p.T @ g)
    gram = x.T @ x
    b = lam * 0.5 * (gram + gram.T)
    w = solve_sylvester(a, b, c)
    return SaeModel(w, float(lam), semantics.attribute_names, normalize_features)


@dataclass(frozen=True, eq=False)
class SaePredictor:
    model: SaeModel
    prototypes: SemanticSpace

    def __post_init__(self):
        if self.prototypes.n_attributes != self.model.W.shape[0]:
            raise DimensionMismatch(
                f"prototype width {self.prototypes.n_attributes} != W rows {self.model.W.shape[0]}")
        if self.prototypes.n_classes < 1:
            raise EmptyEvalSet("predictor has no candidate classes")

    def predict_indices(self, features: np.ndarray) -> np.ndarray:
        emb = self.model.encode(features)
        if emb.shape[0] and not np.any(emb, axis=1).all():
            warnings.warn("zero semantic embedding; predicting the first candidate class",
                          ZeroEmbeddingWarning, stacklevel=3)
        return _accel.nearest_cosine(emb, self.prototypes.matrix)

    def predict_many(self, features: np.ndarray) -> list[str]:
        ids = self.prototypes.class_ids
        return [ids[i] for i in self.predict_indices(features)]


def predict(predictor: SaePredictor, x) -> str:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return predictor.predict_many(x)[0]


def accuracy_from_predictions(pred: np.ndarray, truth: np.ndarray, per_class: bool = False) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise EmptyEvalSet("cannot score an empty evaluation set")
    hit = pred == truth
    if not per_class:
        return float(hit.mean())
    classes = np.unique(truth)
    return float(np.mean([hit[truth == c].mean() for c in classes]))


def accuracy(predictor: SaePredictor, eval_set: VisualSet, per_class: bool = False) -> float:
    if eval_set.n_instances == 0:
        raise EmptyEvalSet("cannot score an empty evaluation set")
    truth = eval_set.codes(predictor.prototypes)
    pred = predictor.predict_indices(eval_set.features)
    return accuracy_from_predictions(pred, truth, per_class)


def objective(w: np.ndarray, s: np.ndarray, x: np.ndarray, lam: float) -> float:
    """SAE loss for column-major ``S`` (L x M) and ``X`` (D x M)."""
    return float(np.linalg.norm(x - w.T @ s) ** 2 + lam * np.linalg.norm(w @ x - s) ** 2)


def objective_gradient(w: np.ndarray, s: np.ndarray, x: np.ndarray, lam: float) -> np.ndarray:
    return 2.0 * (s @ s.T @ w + lam * w @ x @ x.T - (1.0 + lam) * s @ x.T)


def fit_and_score(train_sem: SemanticSpace, train: VisualSet, eval_sem: SemanticSpace,
                  eval_set: VisualSet, lam: float = DEFAULT_LAMBDA, *, per_class: bool = False,
                  normalize_prototypes: bool = False, normalize_features: bool = False) -> float:
    """Train on one class set and score on another (the plain, unoptimised route)."""
    model = train_sae(train_sem, train, lam, normalize_prototypes=normalize_prototypes,
                      normalize_features=normalize_features)
    protos = eval_sem
    if normalize_prototypes:
        protos = SemanticSpace(eval_sem.class_ids, eval_sem.attribute_names,
                               normalize_rows(eval_sem.matrix))
    return accuracy(SaePredictor(model, protos), eval_set, per_class)


# ---------------------------------------------------------------------------
# repeated subset evaluation
# ---------------------------------------------------------------------------

class SubsetEvaluator:
    """Scores attribute masks for one fixed train/validation class split.

    Everything that does not depend on the mask is computed once: the
    eigendecomposition of the visual Gram matrix, per-class feature sums
    rotated into its eigenbasis, and the rotated validation features. Each
    mask then costs one L x L eigendecomposition plus a few small products.
    """

    def __init__(self, train_sem: SemanticSpace, train: VisualSet, val_sem: SemanticSpace,
                 val: VisualSet, lam: float = DEFAULT_LAMBDA, *, per_class: bool = False,
                 normalize_prototypes: bool = False, normalize_features: bool = False):
        if lam <= 0:
            raise ConfigError("lambda must be positive")
        if train_sem.n_attributes != val_sem.n_attributes:
            raise DimensionMismatch("train and validation semantics differ in width")
        self.lam = float(lam)
        self.per_class = per_class
        self.normalize_prototypes = normalize_prototypes
        self.n_attributes = train_sem.n_attributes
        x = train.features
        xv = val.features
        if normalize_features:
            x, xv = normalize_rows(x), normalize_rows(xv)
        codes = train.codes(train_sem)
        self._counts = np.bincount(codes, minlength=train_sem.n_classes).astype(np.float64)
        gram = x.T @ x
        self._lb, v = sym_eig(self.lam * 0.5 * (gram + gram.T))
        g = _accel.class_sums(x, codes, train_sem.n_classes)
        self._gv = g @ v
        self._vt_xv = v.T @ xv.T
        self._p_train = train_sem.matrix
        self._p_val = val_sem.matrix
        self._truth = val.codes(val_sem)
        if self._truth.size == 0:
            raise EmptyEvalSet("validation set is empty")

    def _protos(self, p: np.ndarray, m: np.ndarray) -> np.ndarray:
        q = p[:, m]
        return normalize_rows(q) if self.normalize_prototypes else q

    def embeddings(self, mask) -> np.ndarray:
        m = as_mask(mask, self.n_attributes)
        if not m.any():
            raise EmptyMask("mask selects no attributes")
        p = self._protos(self._p_train, m)
        a = p.T @ (self._counts[:, None] * p)
        la, u = sym_eig(a)
        cv = (1.0 + self.lam) * (p.T @ self._gv)
        c_norm = float(np.linalg.norm(cv))
        rot = _solve_rotated(la, self._lb, u.T @ cv, c_norm)
        return (u @ (rot @ self._vt_xv)).T

    def predict_indices(self, mask) -> np.ndarray:
        m = as_mask(mask, self.n_attributes)
        emb = self.embeddings(m)
        return _accel.nearest_cosine(emb, self._protos(self._p_val, m))

    def accuracy(self, mask) -> float:
        return accuracy_from_predictions(self.predict_indices(mask), self._truth, self.per_class)


# ---------------------------------------------------------------------------
# shared evaluation settings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaeSettings:
    lam: float = DEFAULT_LAMBDA
    per_class: bool = False
    normalize_prototypes: bool = False
    normalize_features: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")

    @classmethod
    def coerce(cls, value) -> "SaeSettings":
        if isinstance(value, cls):
            return value
        return cls(lam=float(value))

    def to_json(self) -> dict:
        return {"lambda": self.lam, "accuracy_mode": "per_class" if self.per_class else "per_instance",
                "normalize_prototypes": self.normalize_prototypes,
                "normalize_features": self.normalize_features}


def evaluate_on_unseen(bundle, mask, settings=DEFAULT_LAMBDA) -> float:
    """Retrain on every seen class with the masked semantics and score the unseen test set."""
    from .data import restrict

    st = SaeSettings.coerce(settings)
    sem = restrict(bundle.semantics, mask) if mask is not None else bundle.semantics
    return fit_and_score(sem.subset(bundle.split.seen), bundle.train,
                         sem.subset(bundle.split.unseen), bundle.test, st.lam,
                         per_class=st.per_class, normalize_prototypes=st.normalize_prototypes,
                         normalize_features=st.normalize_features)


def subset_evaluator(train_sem, train, val_sem, val, settings=DEFAULT_LAMBDA) -> SubsetEvaluator:
    st = SaeSettings.coerce(settings)
    return SubsetEvaluator(train_sem, train, val_sem, val, st.lam, per_class=st.per_class,
                           normalize_prototypes=st.normalize_prototypes,
                           normalize_features=st.normalize_features)
