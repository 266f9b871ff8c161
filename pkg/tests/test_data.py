from __future__ import annotations

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semsel.data import (
    SemanticSpace,
    VisualSet,
    ZslBundle,
    decode_matrix,
    encode_matrix,
    load_bundle,
    normalize_rows,
    restrict,
    save_bundle,
)
from semsel.errors import (
    DataError,
    DimensionMismatch,
    EmptyMask,
    LengthMismatch,
    MissingFile,
    NonFiniteValue,
    UnknownLabel,
    ZeroPrototypeWarning,
)


def test_restrict_keeps_selected_columns():
    s = SemanticSpace(["p", "q"], ["a", "b", "c", "d"], [[1, 2, 3, 4], [5, 6, 7, 8]])
    r = restrict(s, [1, 0, 1, 0])
    assert r.attribute_names == ("a", "c")
    np.testing.assert_array_equal(r.matrix, [[1, 3], [5, 7]])


def test_restrict_all_ones_is_identity():
    s = SemanticSpace(["p", "q"], ["a", "b"], [[1, 2], [3, 4]])
    assert restrict(s, [1, 1]) == s


def test_restrict_rejects_empty_and_wrong_length():
    s = SemanticSpace(["p"], ["a", "b"], [[1, 2]])
    with pytest.raises(EmptyMask):
        restrict(s, [0, 0])
    with pytest.raises(LengthMismatch):
        restrict(s, [1, 0, 1])


def test_normalize_rows_examples():
    out = normalize_rows(np.array([[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]]))
    np.testing.assert_allclose(out, [[0.6, 0.8], [0.0, 0.0], [1.0, 0.0]], atol=1e-15)


@given(arrays(np.float64, (4, 3), elements=st.floats(-1e3, 1e3)))
def test_normalize_rows_unit_or_zero_and_idempotent(m):
    out = normalize_rows(m)
    norms = np.linalg.norm(out, axis=1)
    nonzero = (m != 0).any(axis=1)
    np.testing.assert_allclose(norms[nonzero], 1.0, atol=1e-12)
    np.testing.assert_array_equal(out[~nonzero], 0.0)
    np.testing.assert_allclose(normalize_rows(out), out, atol=1e-15)


def test_zero_prototype_row_warns():
    with pytest.warns(ZeroPrototypeWarning):
        SemanticSpace(["p", "q"], ["a"], [[0.0], [1.0]])


def test_arrays_are_read_only_copies():
    m = np.ones((2, 2))
    s = SemanticSpace(["p", "q"], ["a", "b"], m)
    m[0, 0] = 5
    assert s.matrix[0, 0] == 1
    with pytest.raises(ValueError):
        s.matrix[0, 0] = 2


def test_non_finite_rejected():
    with pytest.raises(NonFiniteValue):
        VisualSet([[np.nan]], ["a"])


def test_bundle_round_trip(tmp_path, tiny_bundle):
    save_bundle(tiny_bundle, tmp_path)
    back = load_bundle(tmp_path)
    assert back.semantics.n_attributes == 4
    assert back.train.dim == 5
    # features are stored as float32
    np.testing.assert_allclose(back.train.features, tiny_bundle.train.features, rtol=1e-6)
    assert back.split == tiny_bundle.split


def test_round_trip_is_exact_for_float32_values(tmp_path, synth_bundle):
    bundle, _ = synth_bundle
    save_bundle(bundle, tmp_path)
    back = load_bundle(tmp_path)
    assert back == bundle
    assert back.identity_hash() == bundle.identity_hash()


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_binary_matrix_round_trip(m, d, seed):
    x = np.random.default_rng(seed).normal(size=(m, d)).astype(np.float32).astype(np.float64)
    labels = [f"l{i}" for i in range(m)]
    back, lab = decode_matrix(encode_matrix(x, labels))
    np.testing.assert_array_equal(back, x)
    assert lab == labels


def test_decode_rejects_bad_magic_and_truncation():
    blob = encode_matrix(np.zeros((2, 3)), ["a", "b"])
    with pytest.raises(DataError):
        decode_matrix(b"XXXXXXXX" + blob[8:])
    with pytest.raises(DimensionMismatch):
        decode_matrix(blob[:20])


def test_load_missing_directory_and_files(tmp_path, tiny_bundle):
    with pytest.raises(MissingFile):
        load_bundle(tmp_path / "absent")
    save_bundle(tiny_bundle, tmp_path)
    (tmp_path / "test.bin").unlink()
    with pytest.raises(MissingFile):
        load_bundle(tmp_path)


def test_load_header_width_mismatch(tmp_path, tiny_bundle):
    save_bundle(tiny_bundle, tmp_path)
    lines = (tmp_path / "semantics.csv").read_text().splitlines()
    lines[1] += ",9"
    (tmp_path / "semantics.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DimensionMismatch):
        load_bundle(tmp_path)


def test_load_unknown_test_label(tmp_path, tiny_bundle):
    b = tiny_bundle
    save_bundle(b, tmp_path)
    from semsel.data import write_matrix_bin

    write_matrix_bin(tmp_path / "test.bin", b.test.features, ["c", "zebra"])
    with pytest.raises(UnknownLabel):
        load_bundle(tmp_path)


def test_load_csv_feature_fallback(tmp_path, tiny_bundle):
    save_bundle(tiny_bundle, tmp_path)
    (tmp_path / "train.bin").unlink()
    rows = ["label," + ",".join(f"f{j}" for j in range(5))]
    for y, f in zip(tiny_bundle.train.labels, tiny_bundle.train.features):
        rows.append(y + "," + ",".join(repr(float(v)) for v in f))
    (tmp_path / "train.csv").write_text("\n".join(rows) + "\n")
    assert load_bundle(tmp_path).train == tiny_bundle.train


def test_malformed_split(tmp_path, tiny_bundle):
    save_bundle(tiny_bundle, tmp_path)
    (tmp_path / "split.json").write_text(json.dumps({"seen": ["a"]}))
    with pytest.raises(DataError):
        load_bundle(tmp_path)


def test_train_label_outside_seen_split(tiny_bundle):
    b = tiny_bundle
    bad = VisualSet(b.train.features, ["a", "a", "a", "b", "b", "c"])
    with pytest.raises(DataError):
        ZslBundle(b.semantics, bad, b.test, b.split)


def test_identity_hash_changes_with_data(tiny_bundle):
    b = tiny_bundle
    other = ZslBundle(b.semantics, VisualSet(b.train.features + 1, b.train.labels), b.test, b.split)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert other.identity_hash() != b.identity_hash()
