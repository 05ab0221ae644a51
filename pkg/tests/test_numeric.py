import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ngcf.errors import DivergenceError, ShapeError
from ngcf.numeric import (
    SparseMatrix,
    check_finite,
    dropout_mask,
    hadamard,
    leaky_relu,
    leaky_relu_grad,
    make_rng,
    matmul,
    scatter_add_rows,
    sigmoid,
    softplus,
    spmm,
    xavier_init,
)


def naive_matmul(A, B):
    out = np.zeros((A.shape[0], B.shape[1]))
    for i in range(A.shape[0]):
        for j in range(B.shape[1]):
            for k in range(A.shape[1]):
                out[i, j] += A[i, k] * B[k, j]
    return out


def test_spmm_identity_and_zero(rng):
    X = rng.normal(size=(6, 3)).astype(np.float32)
    eye = SparseMatrix.from_coo(np.arange(6), np.arange(6), np.ones(6), (6, 6))
    assert np.array_equal(spmm(eye, X), X)
    zero = SparseMatrix.from_coo([], [], [], (6, 6))
    assert np.array_equal(spmm(zero, X), np.zeros_like(X))


def test_spmm_matches_dense_oracle(rng):
    dense = rng.normal(size=(15, 15)) * (rng.random((15, 15)) < 0.3)
    S = SparseMatrix.from_dense(dense)
    X = rng.normal(size=(15, 4)).astype(np.float32)
    assert np.max(np.abs(spmm(S, X) - naive_matmul(dense, X.astype(np.float64)))) < 1e-5


def test_spmm_rejects_shape_mismatch():
    S = SparseMatrix.from_coo([0], [0], [1.0], (2, 3))
    with pytest.raises(ShapeError):
        spmm(S, np.zeros((2, 2)))


def test_spmm_handles_empty_rows():
    S = SparseMatrix.from_coo([0, 3], [1, 2], [2.0, -1.0], (5, 3))
    X = np.arange(6, dtype=np.float64).reshape(3, 2)
    assert np.array_equal(spmm(S, X), S.to_dense() @ X)


@given(
    st.integers(1, 8),
    st.integers(1, 8),
    st.integers(1, 4),
    st.integers(0, 2**32 - 1),
)
def test_spmm_property_vs_dense(n_rows, n_cols, d, seed):
    r = np.random.default_rng(seed)
    dense = r.normal(size=(n_rows, n_cols)) * (r.random((n_rows, n_cols)) < 0.5)
    X = r.normal(size=(n_cols, d))
    S = SparseMatrix.from_dense(dense)
    S.validate()
    assert np.allclose(spmm(S, X), dense @ X, atol=1e-12)


def test_from_coo_sums_duplicates_and_sorts():
    S = SparseMatrix.from_coo([1, 0, 1], [2, 1, 2], [1.0, 3.0, 4.0], (2, 3))
    assert S.row_offsets.tolist() == [0, 1, 2]
    assert S.col_indices.tolist() == [1, 2]
    assert S.values.tolist() == [3.0, 5.0]


def test_transpose_roundtrip(rng):
    dense = rng.normal(size=(4, 7)) * (rng.random((4, 7)) < 0.4)
    S = SparseMatrix.from_dense(dense)
    assert np.array_equal(S.transpose().to_dense(), dense.T)


def test_scatter_add_rows_matches_loop(rng):
    idx = rng.integers(0, 5, 40)
    vals = rng.normal(size=(40, 3))
    expected = np.zeros((5, 3))
    for k, i in enumerate(idx):
        expected[i] += vals[k]
    assert np.allclose(scatter_add_rows(5, idx, vals), expected, atol=1e-12)


def test_matmul_identity_zero_and_hand_oracle():
    A = np.array([[1.0, 2, 3], [4, 5, 6], [7, 8, 10]])
    B = np.array([[2.0, 0, 1], [1, 1, 0], [0, 3, 1]])
    assert np.array_equal(matmul(A, np.eye(3)), A)
    assert np.array_equal(matmul(A, np.zeros((3, 3))), np.zeros((3, 3)))
    assert np.array_equal(matmul(A, B), naive_matmul(A, B))
    with pytest.raises(ShapeError):
        matmul(A, np.zeros((2, 3)))


def test_elementwise_definitions():
    assert leaky_relu(np.array(-1.0), 0.2) == pytest.approx(-0.2)
    assert sigmoid(0.0) == 0.5
    assert hadamard(np.array([2.0, 3.0]), np.array([4.0, 5.0])).tolist() == [8.0, 15.0]
    assert leaky_relu_grad(np.array([-1.0, 0.0, 2.0]), 0.2).tolist() == [0.2, 1.0, 1.0]
    with pytest.raises(ShapeError):
        hadamard(np.zeros(2), np.zeros(3))


def test_leaky_relu_keeps_float32():
    x = np.array([-1.0, 1.0], dtype=np.float32)
    assert leaky_relu(x).dtype == np.float32
    assert leaky_relu_grad(x).dtype == np.float32


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50)))
def test_leaky_relu_grad_matches_difference_quotient(x):
    h = 1e-6
    x = x[np.abs(x) > 1e-3]
    num = (leaky_relu(x + h, 0.3) - leaky_relu(x - h, 0.3)) / (2 * h)
    assert np.allclose(num, leaky_relu_grad(x, 0.3), atol=1e-6)


def test_softplus_stable():
    import mpmath

    mpmath.mp.dps = 50
    expected = float(mpmath.log(1 + mpmath.exp(30)))
    assert softplus(30.0) == pytest.approx(expected, rel=1e-15)
    assert np.isfinite(softplus(1000.0)) and softplus(1000.0) == 1000.0
    assert sigmoid(-1000.0) == 0.0 and sigmoid(1000.0) == 1.0


def test_xavier_bounds_moment_and_determinism():
    a = np.sqrt(6 / (400 + 250))
    W = xavier_init(400, 250, make_rng(3), np.float64)
    assert np.all(np.abs(W) <= a)
    assert abs(W.mean()) < 3 * a / np.sqrt(3 * W.size)
    assert np.array_equal(W, xavier_init(400, 250, make_rng(3), np.float64))
    with pytest.raises(ShapeError):
        xavier_init(0, 3, make_rng(0))


def test_dropout_mask_values_and_expectation():
    assert np.array_equal(dropout_mask(3, 4, 0.0, make_rng(0)), np.ones((3, 4)))
    masks = np.stack([dropout_mask(4, 5, 0.3, make_rng(s), np.float64) for s in range(10_000)])
    assert set(np.unique(masks)) <= {0.0, 1 / 0.7}
    sigma = np.sqrt(0.3 / 0.7) / np.sqrt(len(masks))
    assert np.all(np.abs(masks.mean(axis=0) - 1.0) < 3 * sigma)
    assert np.array_equal(dropout_mask(3, 3, 0.5, make_rng(9)), dropout_mask(3, 3, 0.5, make_rng(9)))


def test_check_finite_raises_with_layer():
    with pytest.raises(DivergenceError) as info:
        check_finite(np.array([1.0, np.nan]), "x", layer=2)
    assert info.value.layer == 2


def test_subsystem_streams_are_independent_and_reproducible():
    a = make_rng(5, "sampling").random(4)
    b = make_rng(5, "dropout").random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, make_rng(5, "sampling").random(4))
