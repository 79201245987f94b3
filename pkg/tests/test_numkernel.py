import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seavis.exceptions import DimensionError, MaskError
from seavis.numkernel import NEG_INF, l2_normalize, l2_normalize_rows, matmul, softmax_rows

finite = st.floats(-50, 50, allow_nan=False)


def test_matmul_identity():
    x = np.array([[1.5, -2.0, 3.0], [0.0, 4.0, -1.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), x), x)


def test_matmul_scalar():
    assert matmul([[2.0]], [[3.0]]).tolist() == [[6.0]]


def test_matmul_hand_product():
    # 1*5+2*7, 1*6+2*8 / 3*5+4*7, 3*6+4*8
    assert matmul([[1, 2], [3, 4]], [[5, 6], [7, 8]]).tolist() == [[19, 22], [43, 50]]


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        matmul(np.ones(3), np.ones((3, 1)))


def test_softmax_symmetric_row():
    np.testing.assert_allclose(softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]])


def test_softmax_single_unmasked_column():
    out = softmax_rows([[5.0, 9.0]], [[0.0, -np.inf]])
    assert out.tolist() == [[1.0, 0.0]]
    assert softmax_rows([[5.0, 9.0]], [[0.0, NEG_INF]]).tolist() == [[1.0, 0.0]]


def test_softmax_closed_form():
    np.testing.assert_allclose(softmax_rows([[math.log(1), math.log(3)]]), [[0.25, 0.75]], atol=1e-15)


def test_softmax_fully_masked_row():
    with pytest.raises(MaskError):
        softmax_rows([[1.0, 2.0], [3.0, 4.0]], [[0.0, 0.0], [NEG_INF, NEG_INF]])


def test_softmax_mask_shape():
    with pytest.raises(DimensionError):
        softmax_rows([[1.0, 2.0]], [[0.0]])


def test_softmax_rejects_nan_mask():
    with pytest.raises(ValueError):
        softmax_rows([[1.0, 2.0]], [[0.0, np.nan]])


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    assert l2_normalize([0.0, 0.0]).tolist() == [0.0, 0.0]
    np.testing.assert_allclose(l2_normalize([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0], atol=1e-9)


def test_l2_normalize_rows_matches_vector_version():
    x = np.random.default_rng(0).normal(size=(4, 5))
    for row, out in zip(x, l2_normalize_rows(x)):
        np.testing.assert_allclose(out, l2_normalize(row), atol=1e-15)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite))
def test_softmax_rows_are_distributions(logits):
    out = softmax_rows(logits)
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite), finite)
def test_softmax_shift_invariance(logits, c):
    np.testing.assert_allclose(softmax_rows(logits + c), softmax_rows(logits), atol=1e-9)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_softmax_masked_entries_zero(rows, cols, seed):
    rng = np.random.default_rng(seed)
    mask = np.where(rng.random((rows, cols)) < 0.5, NEG_INF, 0.0)
    mask[:, 0] = 0.0
    out = softmax_rows(rng.normal(size=(rows, cols)), mask)
    assert (out[mask == NEG_INF] == 0).all()
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_l2_normalize_norm_is_exact(v):
    r = np.linalg.norm(v)
    np.testing.assert_allclose(np.linalg.norm(l2_normalize(v)), r / (r + 1e-12), rtol=1e-12)


# eps = 1e-12 shrinks the output norm by eps/|v|, so the 1e-9 tolerances only
# hold once |v| >= 1e-3
@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_l2_normalize_idempotent(v):
    if np.linalg.norm(v) < 1e-3:
        return
    once = l2_normalize(v)
    assert 1 - 1e-9 < np.linalg.norm(once) <= 1.0
    np.testing.assert_allclose(l2_normalize(once), once, atol=1e-9)


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_matmul_associative(m, n, p, q, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(m, n)), rng.normal(size=(n, p)), rng.normal(size=(p, q))
    np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9)
