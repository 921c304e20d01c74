import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from unfitted_bddc.krylov import IndefiniteError, condition_estimate, lanczos_tridiagonal, pcg


def laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def test_identity_one_step(rng):
    b = rng.standard_normal(10)
    x, rep = pcg(sp.eye(10), b)
    np.testing.assert_allclose(x, b)
    assert rep.iterations == 1 and rep.converged
    assert rep.cond_estimate is None


def test_exact_preconditioner(rng):
    A = laplacian_1d(20)
    Ainv = np.linalg.inv(A.toarray())
    x, rep = pcg(A, rng.standard_normal(20), M=lambda r: Ainv @ r)
    assert rep.iterations == 1


def test_laplacian_finite_termination(rng):
    n = 32
    A = laplacian_1d(n)
    b = rng.standard_normal(n)
    x, rep = pcg(A, b, tol=1e-10)
    assert rep.converged and rep.iterations <= n
    assert np.linalg.norm(b - A @ x) < 1e-10 * np.linalg.norm(b)
    assert rep.residual_history[-1] < 1e-10 * np.linalg.norm(b)


def test_condition_estimate_diagonal():
    A = sp.diags([1.0, 10.0])
    _, rep = pcg(A, np.ones(2), tol=1e-14)
    assert rep.cond_estimate == pytest.approx(10.0, rel=1e-8)


def test_ritz_values_interlace(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((50, 50)))
    ev = np.geomspace(1, 1e3, 50)
    A = (Q * ev) @ Q.T
    _, rep = pcg(A, rng.standard_normal(50), tol=1e-3)
    lo, hi = rep.extreme_eigenvalues()
    assert ev[0] - 1e-8 <= lo and hi <= ev[-1] + 1e-8
    # the condition estimate only grows as more Lanczos steps are added
    k = len(rep.alphas)
    est = [condition_estimate(rep.alphas[:j], rep.betas[: j - 1]) for j in range(2, k + 1)]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(est, est[1:]))


def test_tridiagonal_from_coefficients():
    d, e = lanczos_tridiagonal([0.5, 0.25], [1.0])
    np.testing.assert_allclose(d, [2.0, 4.0 + 2.0])
    np.testing.assert_allclose(e, [2.0])


def test_not_converged_report(rng):
    A = laplacian_1d(100)
    x, rep = pcg(A, rng.standard_normal(100), tol=1e-12, max_iter=5)
    assert not rep.converged
    assert rep.iterations == 5
    assert len(rep.residual_history) == 6


def test_indefinite_preconditioner(rng):
    with pytest.raises(IndefiniteError):
        pcg(laplacian_1d(10), rng.standard_normal(10), M=lambda r: -r)


def test_zero_rhs():
    x, rep = pcg(laplacian_1d(5), np.zeros(5))
    assert rep.converged and rep.iterations == 0
    np.testing.assert_array_equal(x, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=2**31))
def test_residual_matches_true(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = B @ B.T + n * np.eye(n)
    b = rng.standard_normal(n)
    x, rep = pcg(A, b, M=lambda r: r / np.diag(A), tol=1e-9)
    assert rep.converged
    assert np.linalg.norm(b - A @ x) <= 1e-9 * np.linalg.norm(b)
