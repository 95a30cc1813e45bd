import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from funboost.basis import (
    KroneckerDesign,
    SplineBasisDef,
    difference_penalty,
    df_to_lambda,
    eval_bspline_basis,
    hat_trace,
    historical_weights,
    kronecker_design,
    null_space_dim,
    orthogonalize,
    penalized_solver,
    row_tensor,
    trapezoid_weights,
)
from funboost.errors import DimensionError, InfeasibleDfError, RangeError


def test_degree_zero_indicator():
    B = eval_bspline_basis(SplineBasisDef(0, 3, 0.0, 3.0), [1.5])
    np.testing.assert_array_equal(B, [[0, 1, 0]])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 4), st.integers(5, 20), st.integers(0, 10 ** 6))
def test_partition_of_unity(degree, K, seed):
    rng = np.random.default_rng(seed)
    spec = SplineBasisDef(degree, K, -1.0, 2.5)
    B = eval_bspline_basis(spec, rng.uniform(-1, 2.5, 50))
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(B >= -1e-15)


def test_cubic_values_at_interior_knot():
    spec = SplineBasisDef(3, 8, 0.0, 5.0)
    row = eval_bspline_basis(spec, [2.0])[0]
    nz = row[np.abs(row) > 1e-14]
    np.testing.assert_allclose(nz, [1 / 6, 2 / 3, 1 / 6], atol=1e-14)


def test_matches_scipy():
    spec = SplineBasisDef(3, 10, 0.0, 1.0)
    x = np.linspace(0, 1, 41)[:-1]
    ours = eval_bspline_basis(spec, x)
    ref = BSpline.design_matrix(x, spec.knots, 3).toarray()
    np.testing.assert_allclose(ours, ref, atol=1e-13)


def test_out_of_range_points():
    with pytest.raises(RangeError):
        eval_bspline_basis(SplineBasisDef(3, 6, 0.0, 1.0), [1.5])


def test_basis_dimension_errors():
    with pytest.raises(DimensionError):
        SplineBasisDef(3, 3, 0.0, 1.0)
    with pytest.raises(DimensionError):
        SplineBasisDef(2, 5, 1.0, 1.0)


def test_first_order_penalty():
    np.testing.assert_array_equal(difference_penalty(3, 1), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_second_order_penalty_null_space():
    P = difference_penalty(5, 2)
    np.testing.assert_allclose(P @ np.ones(5), 0, atol=1e-14)
    np.testing.assert_allclose(P @ np.arange(1.0, 6.0), 0, atol=1e-13)


def test_penalty_order_too_high():
    with pytest.raises(DimensionError):
        difference_penalty(3, 3)


def test_row_tensor_examples():
    np.testing.assert_array_equal(row_tensor([[1, 2]], [[3, 4]]), [[3, 4, 6, 8]])
    A = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(row_tensor(A, np.ones((3, 1))), A)


def test_row_tensor_loop_oracle():
    rng = np.random.default_rng(2)
    A, B = rng.normal(size=(4, 2)), rng.normal(size=(4, 3))
    ref = np.array([np.kron(A[i], B[i]) for i in range(4)])
    np.testing.assert_allclose(row_tensor(A, B), ref, atol=1e-15)
    with pytest.raises(DimensionError):
        row_tensor(A, B[:3])


def test_kronecker_design_examples():
    np.testing.assert_array_equal(kronecker_design(np.eye(2), np.eye(3)), np.eye(6))
    By = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(kronecker_design([[2.0]], By), 2 * By)


def test_kronecker_matches_row_tensor_expansion():
    rng = np.random.default_rng(3)
    Bx, By = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
    expanded = row_tensor(np.repeat(Bx, 4, axis=0), np.tile(By, (3, 1)))
    np.testing.assert_allclose(kronecker_design(Bx, By), expanded, atol=1e-14)


def test_lazy_kronecker_operations():
    rng = np.random.default_rng(4)
    Bx, By = rng.normal(size=(5, 3)), rng.normal(size=(7, 4))
    lazy = KroneckerDesign(Bx, By)
    X = lazy.dense()
    theta = rng.normal(size=12)
    U = rng.normal(size=(5, 7))
    w = rng.integers(0, 3, 5).astype(float)
    np.testing.assert_allclose(lazy.matvec(theta), X @ theta, atol=1e-12)
    np.testing.assert_allclose(lazy.crossprod(U, w), X.T @ (U * w[:, None]).ravel(), atol=1e-12)
    np.testing.assert_allclose(lazy.gram(w), (X * np.repeat(w, 7)[:, None]).T @ X, atol=1e-12)


def test_orthogonalize_centering():
    Z, B = orthogonalize(np.eye(3), np.ones(3))
    assert B.shape == (3, 2)
    np.testing.assert_allclose(B.T @ np.ones(3), 0, atol=1e-14)


def test_orthogonalize_zero_constraints():
    X = np.random.default_rng(5).normal(size=(6, 3))
    Z, B = orthogonalize(X, np.zeros((6, 2)))
    np.testing.assert_array_equal(Z, np.eye(3))
    np.testing.assert_array_equal(B, X)


def test_interaction_orthogonal_to_marginals():
    rng = np.random.default_rng(6)
    z1, z2 = rng.uniform(size=80), rng.uniform(size=80)
    s = SplineBasisDef(3, 6, 0.0, 1.0)
    B1, B2 = eval_bspline_basis(s, z1), eval_bspline_basis(s, z2)
    marg = np.hstack([B1, B2])
    _, B = orthogonalize(row_tensor(B1, B2), marg)
    assert np.max(np.abs(B.T @ marg)) < 1e-8


def test_ridge_lambda_closed_form():
    gram = np.eye(26)
    assert df_to_lambda(gram, np.eye(26), 13.0) == pytest.approx(1.0, rel=1e-6)


def test_df_equal_rank_is_unpenalized():
    X = np.random.default_rng(7).normal(size=(30, 6))
    assert df_to_lambda(X.T @ X, difference_penalty(6, 2), 6.0) == 0.0


def test_df_infeasible():
    X = np.random.default_rng(8).normal(size=(30, 6))
    G = X.T @ X
    with pytest.raises(InfeasibleDfError):
        df_to_lambda(G, difference_penalty(6, 2), 7.0)
    with pytest.raises(InfeasibleDfError):
        df_to_lambda(G, difference_penalty(6, 2), 1.5)


def test_pspline_trace_recomputed():
    x = np.linspace(0, 1, 200)
    B = eval_bspline_basis(SplineBasisDef(3, 30, 0.0, 1.0), x)
    G, P = B.T @ B, difference_penalty(30, 2)
    lam = df_to_lambda(G, P, 13.0)
    assert abs(hat_trace(G, P, lam) - 13.0) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 15), st.floats(0.05, 0.95), st.integers(0, 10 ** 6))
def test_df_calibration_property(K, frac, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(3 * K, K))
    G, P = X.T @ X, difference_penalty(K, 2)
    target = 2 + frac * (K - 2)
    lam = df_to_lambda(G, P, target)
    assert abs(hat_trace(G, P, lam) - target) < 1e-6


@pytest.mark.parametrize("drop", [(4,), (0, 4), (2,)])
def test_null_space_with_rank_deficient_gram(drop):
    # columns the data never sees; compare with the lambda -> infinity trace
    X = np.random.default_rng(9).normal(size=(20, 6))
    X[:, list(drop)] = 0.0
    G, P = X.T @ X, difference_penalty(6, 2) + 1e-3 * np.diag([0, 0, 0, 0, 0, 1.0])
    assert null_space_dim(G, P) == round(hat_trace(G, P, 1e9))


def test_penalized_solver_interpolates():
    rng = np.random.default_rng(10)
    B = rng.normal(size=(5, 5))
    u = rng.normal(size=5)
    theta = penalized_solver(B.T @ B, np.zeros((5, 5))) @ (B.T @ u)
    np.testing.assert_allclose(B @ theta, u, atol=1e-8)


def test_penalized_solver_dense_oracle():
    rng = np.random.default_rng(11)
    B = rng.normal(size=(40, 8))
    P = 0.7 * difference_penalty(8, 2)
    u = rng.normal(size=40)
    ours = penalized_solver(B.T @ B, P) @ (B.T @ u)
    ref = np.linalg.solve(B.T @ B + P, B.T @ u)
    np.testing.assert_allclose(ours, ref, atol=1e-10)
    np.testing.assert_array_equal(penalized_solver(B.T @ B, P) @ np.zeros(8), 0)


def test_trapezoid_weights_uniform():
    s = np.linspace(0, 1, 100)
    w = trapezoid_weights(s)
    h = s[1] - s[0]
    np.testing.assert_allclose(w[1:-1], h)
    np.testing.assert_allclose(w[[0, -1]], h / 2)
    assert abs(w @ s - 0.5) < 1e-3


def test_historical_weights_constant_integrand():
    s = np.linspace(0, 2, 21)
    W = historical_weights(s, s)
    np.testing.assert_allclose(W @ np.ones_like(s), s, atol=1e-12)


def test_historical_quadrature_converges():
    errs = []
    for G in (20, 40, 80):
        s = np.linspace(0, 1, G)
        W = historical_weights(s, s)
        errs.append(np.max(np.abs(W @ s ** 2 - s ** 3 / 3)))
    assert errs[1] < errs[0] / 3 and errs[2] < errs[1] / 3
