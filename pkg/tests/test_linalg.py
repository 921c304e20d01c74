import numpy as np
import pytest
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from unfitted_bddc.linalg import (
    DegenerateElementError,
    NotPositiveDefiniteError,
    SingularSaddleError,
    cholesky_solve,
    constant_kernel_eigs_max,
    dense_generalized_eigs_max,
    saddle_factorize,
    sym_from_triplets,
    write_matrix_market,
)


def laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_triplets_sum_duplicates_and_drop_zeros():
    A = sym_from_triplets([0, 0, 1, 1, 0], [0, 0, 1, 0, 1], [1.0, 2.0, 5.0, 0.0, 0.0], 2)
    assert A.toarray().tolist() == [[3.0, 0.0], [0.0, 5.0]]
    assert A.nnz == 2


def test_cholesky_examples():
    b = np.array([3.0, -1.0, 2.0])
    np.testing.assert_array_equal(cholesky_solve(sp.identity(3), b), b)
    np.testing.assert_allclose(cholesky_solve(sp.diags([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])
    A = laplacian_1d(5)
    x = np.arange(1.0, 6.0)
    np.testing.assert_allclose(cholesky_solve(A, A @ x), x, rtol=0, atol=1e-12)


def test_cholesky_residual_random(rng):
    M = rng.standard_normal((40, 40))
    A = sp.csr_matrix(M @ M.T + 40 * np.eye(40))
    b = rng.standard_normal(40)
    x = cholesky_solve(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_cholesky_reports_pivot():
    A = sp.diags([1.0, 2.0, -3.0, 4.0])
    with pytest.raises(NotPositiveDefiniteError) as err:
        cholesky_solve(A, np.ones(4))
    assert err.value.pivot == 2


def test_saddle_examples():
    f = saddle_factorize(sp.identity(2), np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(f.solve([1.0, 1.0, 0.0]), [0.0, 1.0, 1.0], atol=1e-14)
    g = saddle_factorize(sp.csr_matrix((1, 1)), np.array([[1.0]]))
    np.testing.assert_allclose(g.solve([0.0, 1.0])[:1], [1.0])


def test_saddle_residual_random(rng):
    M = rng.standard_normal((20, 20))
    A = sp.csr_matrix(M @ M.T)
    C = rng.standard_normal((3, 20))
    f = saddle_factorize(A, C)
    b = rng.standard_normal(23)
    x = f.solve(b)
    assert np.linalg.norm(f.matvec(x) - b) <= 1e-10 * np.linalg.norm(b)


def test_saddle_singular_reports_subdomain():
    A = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    with pytest.raises(SingularSaddleError) as err:
        saddle_factorize(A, np.zeros((0, 2)), subdomain=7)
    assert err.value.subdomain == 7


def test_saddle_badly_scaled_but_regular():
    # a DOF with tiny stiffness is not a singularity
    A = sp.diags([1.0, 1e-18, 2.0])
    f = saddle_factorize(A, np.array([[1.0, 0.0, 1.0]]))
    b = np.array([1.0, 1e-18, 1.0, 0.5])
    x = f.solve(b)
    assert np.linalg.norm(f.matvec(x) - b) <= 1e-10 * np.linalg.norm(b)


def brute_force_lambda(B, D):
    w, V = np.linalg.eigh(D)
    keep = w > 1e-12 * w[-1]
    W = V[:, keep]
    return scipy.linalg.eigh(W.T @ B @ W, W.T @ D @ W, eigvals_only=True)[-1]


def q1_face_pencil():
    # full unit 2D Q1 cell, Dirichlet side x = 1
    from unfitted_bddc.assembly import q1_shape, reference_stiffness
    from unfitted_bddc.quadrature import gauss_legendre

    D = reference_stiffness(np.ones(2))
    t, w = gauss_legendre(3)
    pts = np.stack([np.ones_like(t), t], axis=-1)
    _, dN = q1_shape(pts)
    dn = dN[..., 0]
    B = np.einsum("s,sa,sb->ab", w, dn, dn)
    return B, D


def test_eigs_examples():
    _, D = q1_face_pencil()
    assert dense_generalized_eigs_max(D, D) == pytest.approx(1.0, rel=1e-12)
    assert dense_generalized_eigs_max(np.zeros((4, 4)), D) == pytest.approx(0.0, abs=1e-14)
    B, D = q1_face_pencil()
    assert dense_generalized_eigs_max(B, D) == pytest.approx(brute_force_lambda(B, D), rel=1e-10)


def test_eigs_degenerate():
    with pytest.raises(DegenerateElementError):
        dense_generalized_eigs_max(np.eye(2), np.zeros((2, 2)))


@settings(max_examples=25, deadline=None)
@given(s=st.floats(1e-3, 1e3))
def test_eigs_scaling(s):
    B, D = q1_face_pencil()
    lam = dense_generalized_eigs_max(B, D)
    assert dense_generalized_eigs_max(s * B, s * D) == pytest.approx(lam, rel=1e-10)
    assert dense_generalized_eigs_max(s * B, D) == pytest.approx(s * lam, rel=1e-10)


def test_constant_kernel_matches_deflation():
    B, D = q1_face_pencil()
    assert constant_kernel_eigs_max(B, D) == pytest.approx(dense_generalized_eigs_max(B, D), rel=1e-12)
    # constants may be added freely to both forms' arguments
    P = np.eye(4) + 0.3 * np.outer(np.ones(4), [1.0, -2.0, 0.5, 0.0])
    assert constant_kernel_eigs_max(P.T @ B @ P, P.T @ D @ P) == pytest.approx(
        constant_kernel_eigs_max(B, D), rel=1e-10
    )


def test_constant_kernel_graded_sliver():
    # 1D chain where one spring is 1e-9 times the others: the soft direction
    # carries the top eigenvalue and must keep full relative accuracy
    k = np.array([1.0, 1.0, 1e-9])
    n = k.size + 1
    D = np.zeros((n, n))
    for i, ki in enumerate(k):
        D[i:i + 2, i:i + 2] += ki * np.array([[1, -1], [-1, 1]])
    g = np.zeros(n)
    g[-2:] = [-1.0, 1.0]
    B = np.outer(g, g)
    # with B = g g^T the top eigenvalue is g^T D^+ g = 1 / k_last
    assert constant_kernel_eigs_max(B, D) == pytest.approx(1e9, rel=1e-12)


def test_matrix_market_roundtrip(tmp_path):
    A = laplacian_1d(6)
    write_matrix_market(tmp_path / "a.mtx", A)
    B = scipy.io.mmread(str(tmp_path / "a.mtx"))
    np.testing.assert_array_equal(B.toarray(), A.toarray())
