"""Dataset model and bundle I/O.

A bundle directory holds ``semantics.csv``, ``train.bin``/``test.bin`` (or the
CSV fallbacks ``train.csv``/``test.csv``) and ``split.json``. Matrices are
stored as float32 on disk and promoted to float64 on load.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    DuplicateClassId,
    EmptyMask,
    LengthMismatch,
    MissingFile,
    NonFiniteValue,
    UnknownLabel,
    ZeroPrototypeWarning,
)

MAGIC = b"SEMSEL01"
LABEL_SENTINEL = b"\n#LABELS\n"


def _frozen(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SemanticSpace:
    """Per-class prototype matrix (classes x attributes)."""

    class_ids: tuple[str, ...]
    attribute_names: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(str(c) for c in self.class_ids))
        object.__setattr__(self, "attribute_names", tuple(str(a) for a in self.attribute_names))
        m = _frozen(self.matrix)
        if m.ndim != 2:
            raise DimensionMismatch(f"prototype matrix must be 2-D, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)
        if len(set(self.class_ids)) != len(self.class_ids):
            raise DuplicateClassId("class ids must be unique")
        if m.shape[0] != len(self.class_ids):
            raise DimensionMismatch(f"{m.shape[0]} prototype rows for {len(self.class_ids)} class ids")
        if m.shape[1] != len(self.attribute_names):
            raise DimensionMismatch(
                f"prototype width {m.shape[1]} != {len(self.attribute_names)} attribute names")
        if m.shape[1] < 1:
            raise DimensionMismatch("semantic space needs at least one attribute")
        if not np.isfinite(m).all():
            raise NonFiniteValue("prototype matrix contains non-finite values")
        zero = ~m.any(axis=1)
        if zero.any():
            bad = [self.class_ids[i] for i in np.flatnonzero(zero)]
            warnings.warn(f"all-zero prototype rows for classes {bad}", ZeroPrototypeWarning, stacklevel=3)

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.matrix.shape[1]

    def index_of(self, class_id: str) -> int:
        try:
            return self._index[class_id]
        except KeyError:
            raise UnknownLabel(f"class {class_id!r} not in semantic space") from None

    @property
    def _index(self) -> dict[str, int]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {c: i for i, c in enumerate(self.class_ids)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def subset(self, class_ids: Iterable[str]) -> "SemanticSpace":
        """Rows for ``class_ids`` in the given order."""
        ids = list(class_ids)
        rows = [self.index_of(c) for c in ids]
        return SemanticSpace(ids, self.attribute_names, self.matrix[rows])

    def __eq__(self, other):
        if not isinstance(other, SemanticSpace):
            return NotImplemented
        return (self.class_ids == other.class_ids
                and self.attribute_names == other.attribute_names
                and np.array_equal(self.matrix, other.matrix))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class VisualSet:
    """Instance features (M x D) with one class label per row."""

    features: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        f = _frozen(self.features)
        if f.ndim != 2:
            raise DimensionMismatch(f"feature matrix must be 2-D, got shape {f.shape}")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", tuple(str(y) for y in self.labels))
        if f.shape[0] != len(self.labels):
            raise DimensionMismatch(f"{f.shape[0]} feature rows but {len(self.labels)} labels")
        if f.shape[0] < 1 or f.shape[1] < 1:
            raise DimensionMismatch(f"empty feature matrix {f.shape}")
        if not np.isfinite(f).all():
            raise NonFiniteValue("feature matrix contains non-finite values")

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def codes(self, semantics: SemanticSpace) -> np.ndarray:
        """Row index into ``semantics`` for every label."""
        return np.fromiter((semantics.index_of(y) for y in self.labels), dtype=np.int64,
                           count=len(self.labels))

    def select(self, classes: Iterable[str]) -> "VisualSet":
        keep = set(classes)
        rows = [i for i, y in enumerate(self.labels) if y in keep]
        if not rows:
            raise DataError(f"no instances for classes {sorted(keep)}")
        return VisualSet(self.features[rows], [self.labels[i] for i in rows])

    def __eq__(self, other):
        if not isinstance(other, VisualSet):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.features, other.features)

    __hash__ = None


@dataclass(frozen=True)
class ClassSplit:
    seen: tuple[str, ...]
    unseen: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "seen", tuple(str(c) for c in self.seen))
        object.__setattr__(self, "unseen", tuple(str(c) for c in self.unseen))
        if not self.seen or not self.unseen:
            raise DataError("seen and unseen class sets must both be non-empty")
        if len(set(self.seen)) != len(self.seen) or len(set(self.unseen)) != len(self.unseen):
            raise DuplicateClassId("duplicate class id in split")
        both = set(self.seen) & set(self.unseen)
        if both:
            raise DataError(f"classes both seen and unseen: {sorted(both)}")


@dataclass(frozen=True, eq=False)
class ZslBundle:
    semantics: SemanticSpace
    train: VisualSet
    test: VisualSet
    split: ClassSplit

    def __post_init__(self):
        known = set(self.semantics.class_ids)
        for c in self.split.seen + self.split.unseen:
            if c not in known:
                raise UnknownLabel(f"split class {c!r} not in semantics")
        seen, unseen = set(self.split.seen), set(self.split.unseen)
        for name, vs, allowed in (("train", self.train, seen), ("test", self.test, unseen)):
            for y in vs.labels:
                if y not in known:
                    raise UnknownLabel(f"{name} label {y!r} not in semantics")
                if y not in allowed:
                    raise DataError(f"{name} label {y!r} outside the {name} class split")
        if self.train.dim != self.test.dim:
            raise DimensionMismatch(f"train D={self.train.dim} != test D={self.test.dim}")

    @property
    def seen_semantics(self) -> SemanticSpace:
        return self.semantics.subset(self.split.seen)

    @property
    def unseen_semantics(self) -> SemanticSpace:
        return self.semantics.subset(self.split.unseen)

    def identity_hash(self) -> str:
        """Content hash over semantics, split and train/test data."""
        h = hashlib.sha256()
        s = self.semantics
        h.update("\x1f".join(s.class_ids).encode())
        h.update("\x1f".join(s.attribute_names).encode())
        h.update(s.matrix.astype("<f4").tobytes())
        h.update(json.dumps({"seen": self.split.seen, "unseen": self.split.unseen}).encode())
        for vs in (self.train, self.test):
            h.update(vs.features.astype("<f4").tobytes())
            h.update("\x1f".join(vs.labels).encode())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ZslBundle):
            return NotImplemented
        return (self.semantics == other.semantics and self.train == other.train
                and self.test == other.test and self.split == other.split)

    __hash__ = None


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def as_mask(bits, n: int | None = None) -> np.ndarray:
    """Coerce to a boolean mask vector, optionally checking its length."""
    m = np.asarray(bits).astype(bool).ravel()
    if n is not None and m.shape[0] != n:
        raise LengthMismatch(f"mask length {m.shape[0]} != {n} attributes")
    return m


def restrict(semantics: SemanticSpace, mask) -> SemanticSpace:
    """Keep only the attribute columns selected by ``mask``."""
    m = as_mask(mask, semantics.n_attributes)
    if not m.any():
        raise EmptyMask("mask selects no attributes")
    names = [a for a, keep in zip(semantics.attribute_names, m) if keep]
    return SemanticSpace(semantics.class_ids, names, semantics.matrix[:, m])


def normalize_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    # scale by the largest entry first so tiny rows do not underflow to a zero norm
    peak = np.abs(m).max(axis=-1, keepdims=True)
    safe = np.where(peak > 0, peak, 1.0)
    scaled = m / safe
    norms = np.linalg.norm(scaled, axis=-1, keepdims=True)
    return np.where(peak > 0, scaled / np.where(norms > 0, norms, 1.0), m)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def format_float(x: float) -> str:
    """Shortest decimal that round-trips the float32 value of ``x``."""
    return repr(float(np.float32(x)))


def encode_matrix(matrix: np.ndarray, labels: Sequence[str]) -> bytes:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise DimensionMismatch("binary matrix must be 2-D")
    m, d = matrix.shape
    if len(labels) != m:
        raise DimensionMismatch(f"{len(labels)} labels for {m} rows")
    for y in labels:
        if "\n" in y:
            raise DataError(f"label {y!r} contains a newline")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", m, d))
    buf.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    buf.write(LABEL_SENTINEL)
    buf.write("".join(f"{y}\n" for y in labels).encode("utf-8"))
    return buf.getvalue()


def decode_matrix(data: bytes, source: str = "<bytes>") -> tuple[np.ndarray, list[str]]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise DataError(f"{source}: bad magic, expected {MAGIC!r}")
    m, d = struct.unpack("<II", data[8:16])
    end = 16 + 4 * m * d
    if len(data) < end + len(LABEL_SENTINEL):
        raise DimensionMismatch(f"{source}: truncated, header says {m}x{d}")
    if data[end:end + len(LABEL_SENTINEL)] != LABEL_SENTINEL:
        raise DimensionMismatch(f"{source}: label sentinel not found after {m}x{d} matrix")
    matrix = np.frombuffer(data, dtype="<f4", count=m * d, offset=16).reshape(m, d)
    text = data[end + len(LABEL_SENTINEL):].decode("utf-8")
    labels = text.split("\n")
    if labels and labels[-1] == "":
        labels.pop()
    if len(labels) != m:
        raise DimensionMismatch(f"{source}: {len(labels)} labels for {m} rows")
    return matrix.astype(np.float64), labels


def write_matrix_bin(path, matrix: np.ndarray, labels: Sequence[str]) -> None:
    atomic_write_bytes(path, encode_matrix(matrix, labels))


def read_matrix_bin(path) -> tuple[np.ndarray, list[str]]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    return decode_matrix(path.read_bytes(), str(path))


def _parse_float(tok: str, where: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise DataError(f"{where}: cannot parse {tok!r} as a number") from None


def read_semantics_csv(path) -> SemanticSpace:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    names = header[1:]
    ids, values = [], []
    for lineno, r in enumerate(body, start=2):
        if len(r) - 1 != len(names):
            raise DimensionMismatch(
                f"{path}:{lineno}: {len(r) - 1} values but header lists {len(names)} attributes")
        ids.append(r[0])
        values.append([_parse_float(t, f"{path}:{lineno}") for t in r[1:]])
    matrix = np.array(values, dtype=np.float64).reshape(len(ids), len(names))
    if not np.isfinite(matrix).all():
        raise NonFiniteValue(f"{path}: non-finite prototype value")
    return SemanticSpace(ids, names, matrix)


def semantics_csv_text(s: SemanticSpace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_id", *s.attribute_names])
    for cid, row in zip(s.class_ids, s.matrix):
        w.writerow([cid, *(format_float(v) for v in row)])
    return buf.getvalue()


def read_visual_csv(path) -> tuple[np.ndarray, list[str]]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and rows[0] and rows[0][0] == "label":
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no instances")
    width = len(rows[0]) - 1
    labels, values = [], []
    for lineno, r in enumerate(rows, start=1):
        if len(r) - 1 != width:
            raise DimensionMismatch(f"{path}:{lineno}: expected {width} features, got {len(r) - 1}")
        labels.append(r[0])
        values.append([_parse_float(t, f"{path}:{lineno}") for t in r[1:]])
    return np.array(values, dtype=np.float64).reshape(len(labels), width), labels


def _load_visual(root: Path, stem: str) -> VisualSet:
    binp, csvp = root / f"{stem}.bin", root / f"{stem}.csv"
    if binp.exists():
        feats, labels = read_matrix_bin(binp)
    elif csvp.exists():
        feats, labels = read_visual_csv(csvp)
    else:
        raise MissingFile(f"{binp} (or {csvp.name})")
    if not np.isfinite(feats).all():
        raise NonFiniteValue(f"{root / stem}: non-finite feature value")
    return VisualSet(feats, labels)


def load_bundle(dir_path) -> ZslBundle:
    root = Path(dir_path)
    if not root.is_dir():
        raise MissingFile(f"bundle directory {root} does not exist")
    semantics = read_semantics_csv(root / "semantics.csv")
    split_path = root / "split.json"
    if not split_path.exists():
        raise MissingFile(str(split_path))
    try:
        raw = json.loads(split_path.read_text(encoding="utf-8"))
        split = ClassSplit(raw["seen"], raw["unseen"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{split_path}: malformed split ({exc})") from None
    train = _load_visual(root, "train")
    test = _load_visual(root, "test")
    return ZslBundle(semantics, train, test, split)


def save_bundle(bundle: ZslBundle, dir_path) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    atomic_write_text(root / "semantics.csv", semantics_csv_text(bundle.semantics))
    write_matrix_bin(root / "train.bin", bundle.train.features, bundle.train.labels)
    write_matrix_bin(root / "test.bin", bundle.test.features, bundle.test.labels)
    split = {"seen": list(bundle.split.seen), "unseen": list(bundle.split.unseen)}
    atomic_write_text(root / "split.json", json.dumps(split, indent=2) + "\n")


def to_float32_exact(a: np.ndarray) -> np.ndarray:
    """Round to float32 precision, kept as float64 (so saves are lossless)."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)
