"""Sparse/dense symmetric linear algebra used by the solver stack.

Sparse matrices are plain :mod:`scipy.sparse` CSR matrices holding the full
symmetric pattern; the helpers here build them from triplets, factorize them
and dump them for offline inspection.
"""

import logging

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "LinAlgError",
    "NotPositiveDefiniteError",
    "SingularSaddleError",
    "DegenerateElementError",
    "sym_from_triplets",
    "write_matrix_market",
    "CholeskyFactor",
    "cholesky_solve",
    "SaddleFactorization",
    "saddle_factorize",
    "dense_generalized_eigs_max",
    "constant_kernel_eigs_max",
]

logger = logging.getLogger(__name__)

KERNEL_TOL = 1e-12
_SINGULAR_PIVOT = 1e-14


class LinAlgError(RuntimeError):
    pass


class NotPositiveDefiniteError(LinAlgError):
    def __init__(self, pivot, value):
        super().__init__(f"non-positive pivot {value:.3e} at row {pivot}")
        self.pivot = pivot
        self.value = value


class SingularSaddleError(LinAlgError):
    def __init__(self, subdomain, deficiency, message=""):
        text = f"singular constrained system on subdomain {subdomain}"
        text += f" (constraint deficiency {deficiency})"
        if message:
            text += f": {message}"
        super().__init__(text)
        self.subdomain = subdomain
        self.deficiency = deficiency


class DegenerateElementError(LinAlgError):
    pass


def sym_from_triplets(rows, cols, vals, n):
    """Assemble a square CSR matrix, summing duplicates and dropping zeros."""
    A = sp.coo_matrix(
        (np.asarray(vals, dtype=float).ravel(),
         (np.asarray(rows).ravel(), np.asarray(cols).ravel())),
        shape=(n, n),
    ).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def write_matrix_market(path, A):
    """Write the lower triangle of symmetric ``A`` in MatrixMarket format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), symmetry="symmetric")


class CholeskyFactor:
    """Symmetric positive definite factorization ``P A P^T = L D L^T``.

    Backed by SuperLU run in symmetric mode without numerical pivoting, so a
    non-positive diagonal pivot certifies that ``A`` is not SPD.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.n = A.shape[0]
        if self.n == 0:
            self._lu = None
            return
        try:
            lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise NotPositiveDefiniteError(-1, 0.0) from exc
        pivots = lu.U.diagonal()
        bad = np.flatnonzero(~(pivots > 0.0))
        if bad.size:
            k = int(bad[0])
            # perm_c maps original index -> elimination position
            original = int(np.flatnonzero(lu.perm_c == k)[0])
            raise NotPositiveDefiniteError(original, float(pivots[k]))
        self._lu = lu

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has {b.shape[0]} rows, expected {self.n}")
        if self.n == 0:
            return np.zeros_like(b)
        return self._lu.solve(b)


def cholesky_solve(A, b):
    return CholeskyFactor(A).solve(b)


class SaddleFactorization:
    """LU factorization of the augmented system ``[[A, C^T], [C, 0]]``.

    The system is symmetrically equilibrated first (Jacobi scaling of the
    primal block, unit-norm constraint rows), so that DOFs living on tiny cut
    pieces do not masquerade as a singular pivot.

    Parameters
    ----------
    A : sparse matrix, shape (n, n)
        Symmetric, possibly singular.
    C : sparse or dense matrix, shape (m, n)
        Constraint rows; together with ``A`` they must make the augmented
        matrix nonsingular.
    subdomain : int, optional
        Only used to label errors.
    """

    def __init__(self, A, C, subdomain=None):
        A = sp.csc_matrix(A, dtype=float)
        n = A.shape[0]
        C = sp.csr_matrix(C, dtype=float) if C is not None else sp.csr_matrix((0, n))
        if C.shape[1] != n:
            raise ValueError(f"constraints have {C.shape[1]} columns, expected {n}")
        self.n = n
        self.m = C.shape[0]
        self._K = sp.bmat([[A, C.T], [C, None]], format="csc") if self.m else A
        d = A.diagonal()
        sa = np.where(d > 0.0, 1.0 / np.sqrt(np.where(d > 0.0, d, 1.0)), 1.0)
        Cs = C @ sp.diags(sa)
        rn = np.sqrt(np.asarray(Cs.multiply(Cs).sum(axis=1)).ravel())
        sc = np.where(rn > 0.0, 1.0 / np.where(rn > 0.0, rn, 1.0), 1.0)
        self._scale = np.concatenate([sa, sc])
        S = sp.diags(self._scale)
        K = (S @ self._K @ S).tocsc()
        if K.shape[0] == 0:
            self._lu = None
            return
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SingularSaddleError(subdomain, -1, str(exc)) from exc
        piv = np.abs(lu.U.diagonal())
        small = piv <= _SINGULAR_PIVOT * piv.max()
        if small.any():
            raise SingularSaddleError(subdomain, int(small.sum()))
        self._lu = lu

    @property
    def shape(self):
        return self._K.shape

    def solve(self, b):
        """Solve the augmented system for a full ``(n + m)`` right-hand side."""
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n + self.m:
            raise ValueError(f"rhs has {b.shape[0]} rows, expected {self.n + self.m}")
        if self._lu is None:
            return np.zeros_like(b)
        s = self._scale.reshape((-1,) + (1,) * (b.ndim - 1))
        return s * self._lu.solve(s * b)

    def solve_primal(self, f, g=None):
        """Return ``(x, multipliers)`` for primal rhs ``f`` and constraint rhs ``g``."""
        f = np.asarray(f, dtype=float)
        tail = (self.m,) + f.shape[1:]
        g = np.zeros(tail) if g is None else np.asarray(g, dtype=float).reshape(tail)
        sol = self.solve(np.concatenate([f, g], axis=0))
        return sol[: self.n], sol[self.n:]

    def matvec(self, x):
        return self._K @ x


def saddle_factorize(A, C, subdomain=None):
    return SaddleFactorization(A, C, subdomain=subdomain)


def dense_generalized_eigs_max(B, D, kernel_tol=KERNEL_TOL):
    """Largest eigenvalue of ``B x = lam D x`` on the range of ``D``.

    Directions where ``D`` is numerically singular (eigenvalue below
    ``kernel_tol * lambda_max(D)``) are deflated; both pencils are assumed to
    share that kernel.
    """
    B = np.asarray(B, dtype=float)
    D = np.asarray(D, dtype=float)
    B = 0.5 * (B + B.T)
    D = 0.5 * (D + D.T)
    dvals, dvecs = np.linalg.eigh(D)
    top = dvals[-1]
    if not top > 0.0:
        raise DegenerateElementError("volume form vanishes identically")
    keep = dvals > kernel_tol * top
    V = dvecs[:, keep] / np.sqrt(dvals[keep])
    P = V.T @ B @ V
    return float(np.linalg.eigvalsh(0.5 * (P + P.T))[-1])


def constant_kernel_eigs_max(B, D, kernel_tol=KERNEL_TOL):
    """Largest eigenvalue of ``B x = lam D x`` when both forms vanish on constants.

    Fixing the DOF with the largest ``D`` diagonal to zero removes the
    constant kernel exactly. The reduced ``D`` is Jacobi scaled and Cholesky
    factored, which keeps full relative accuracy on sliver cut cells where
    ``D`` is strongly graded. Falls back to eigenvalue deflation if the
    reduced ``D`` is not numerically SPD.
    """
    B = np.asarray(B, dtype=float)
    D = np.asarray(D, dtype=float)
    keep = np.arange(D.shape[0]) != np.argmax(np.diag(D))
    Dr = D[np.ix_(keep, keep)]
    d = np.diag(Dr)
    if not np.all(d > 0.0):
        return dense_generalized_eigs_max(B, D, kernel_tol)
    s = 1.0 / np.sqrt(d)
    try:
        L = np.linalg.cholesky(Dr * s[:, None] * s)
    except np.linalg.LinAlgError:
        return dense_generalized_eigs_max(B, D, kernel_tol)
    Br = B[np.ix_(keep, keep)] * s[:, None] * s
    X = scipy.linalg.solve_triangular(L, Br, lower=True)
    P = scipy.linalg.solve_triangular(L, X.T, lower=True)
    return float(np.linalg.eigvalsh(0.5 * (P + P.T))[-1])
