"""Preconditioned conjugate gradients with a Lanczos condition estimate."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

__all__ = ["IndefiniteError", "SolveReport", "pcg", "lanczos_tridiagonal", "condition_estimate"]

logger = logging.getLogger(__name__)

REFRESH_EVERY = 50


class IndefiniteError(RuntimeError):
    """Raised when ``<r, M r>`` is not positive."""


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    converged: bool
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def cond_estimate(self):
        return condition_estimate(self.alphas, self.betas)

    def extreme_eigenvalues(self):
        return _ritz_extremes(self.alphas, self.betas)


def _as_apply(op):
    if op is None:
        return lambda x: x
    if callable(op) and not hasattr(op, "shape"):
        return op
    return lambda x: op @ x


def pcg(A, b, M=None, tol=1e-9, max_iter=2000, x0=None):
    """Solve ``A x = b`` with preconditioned CG.

    ``A`` and ``M`` may be matrices, linear operators or callables. The
    iteration stops once ``||b - A x|| < tol ||b||``; the recursively updated
    residual is replaced by the true one every fifty iterations and checked
    against it before declaring convergence.

    Returns
    -------
    x : ndarray
    report : SolveReport

    Raises
    ------
    IndefiniteError
        If the preconditioner yields ``<r, M r> <= 0`` for a nonzero ``r``.
    """
    start = time.perf_counter()
    apply_A = _as_apply(A)
    apply_M = _as_apply(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_A(x) if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    history = [float(np.linalg.norm(r))]
    alphas, betas = [], []
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(0, history, True, wall_time=time.perf_counter() - start)
    target = tol * bnorm

    z = apply_M(r)
    rz = float(r @ z)
    if not rz > 0.0:
        raise IndefiniteError(f"<r, Mr> = {rz:.3e} at iteration 0")
    p = z.copy()
    converged = False
    it = 0
    while it < max_iter:
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if not pAp > 0.0:
            raise IndefiniteError(f"<p, Ap> = {pAp:.3e} at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        it += 1
        if it % REFRESH_EVERY == 0:
            r = b - apply_A(x)
        else:
            r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        if rnorm < target:
            true = float(np.linalg.norm(b - apply_A(x)))
            if true < target:
                alphas.append(alpha)
                history.append(true)
                converged = True
                break
            r = b - apply_A(x)
            rnorm = true
        history.append(rnorm)
        z = apply_M(r)
        rz_new = float(r @ z)
        if not rz_new > 0.0:
            raise IndefiniteError(f"<r, Mr> = {rz_new:.3e} at iteration {it}")
        beta = rz_new / rz
        alphas.append(alpha)
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    if not converged:
        logger.warning("PCG stopped after %d iterations, residual %.3e", it, history[-1] / bnorm)
    report = SolveReport(it, history, converged, alphas, betas[: max(len(alphas) - 1, 0)],
                         time.perf_counter() - start)
    return x, report


def lanczos_tridiagonal(alphas, betas):
    """Diagonal and off-diagonal of the Lanczos matrix from CG coefficients."""
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)[: max(a.size - 1, 0)]
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    return diag, off


def _ritz_extremes(alphas, betas):
    if len(alphas) < 2:
        return None
    d, e = lanczos_tridiagonal(alphas, betas)
    ev = eigvalsh_tridiagonal(d, e)
    return float(ev[0]), float(ev[-1])


def condition_estimate(alphas, betas):
    """Ratio of extreme Ritz values, or ``None`` with fewer than two steps."""
    ext = _ritz_extremes(alphas, betas)
    if ext is None:
        return None
    lo, hi = ext
    return hi / lo if lo > 0 else float("inf")
