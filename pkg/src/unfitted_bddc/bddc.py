"""Balancing domain decomposition by constraints.

The preconditioner is built on a :class:`~unfitted_bddc.assembly.SubAssembledSystem`
and a set of interface objects. Its application follows the usual recipe:
interior correction, weighted restriction of the residual, constrained
Neumann solves plus a coarse Galerkin correction, weighted averaging and a
final discrete-harmonic extension into subdomain interiors.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import CholeskyFactor, SaddleFactorization
from .partition import ObjectKind

__all__ = [
    "WeightingOperator",
    "CoarseSpace",
    "BDDCPreconditioner",
    "build_weighting",
    "build_coarse_space",
    "OBJECT_SETS",
]

logger = logging.getLogger(__name__)

OBJECT_SETS = {
    "c": (ObjectKind.CORNER,),
    "ce": (ObjectKind.CORNER, ObjectKind.EDGE),
    "cef": (ObjectKind.CORNER, ObjectKind.EDGE, ObjectKind.FACE),
}


@dataclass
class WeightingOperator:
    """Partition-of-unity coefficients ``delta_s(dof)``.

    ``local[s]`` holds the weights over the local DOFs of subdomain ``s`` and
    ``matrix`` the same data as a sparse ``(n_dofs, n_subdomains)`` array.
    """

    mode: str
    local: list
    matrix: sp.csr_matrix

    def row_sums(self):
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def tuple_at(self, dof, neigh):
        return self.matrix[dof][:, list(neigh)].toarray().ravel()


def build_weighting(subsystem, mode="stiffness"):
    """Topological (``1/|neigh|``) or stiffness (diagonal ratio) weights.

    Raises
    ------
    ValueError
        For an unknown mode, or when the diagonals at a DOF sum to zero.
    """
    if mode not in ("topological", "stiffness"):
        raise ValueError(f"unknown weighting {mode!r}")
    n = subsystem.n
    if mode == "topological":
        mult = subsystem.multiplicity.astype(float)
        local = [1.0 / mult[loc.dofs] for loc in subsystem.locals]
    else:
        total = np.zeros(n)
        diags = [loc.matrix.diagonal() for loc in subsystem.locals]
        for loc, dg in zip(subsystem.locals, diags):
            total[loc.dofs] += dg
        bad = np.flatnonzero(~(total > 0.0))
        if bad.size:
            raise ValueError(f"zero total diagonal at DOF {bad[0]}")
        local = [dg / total[loc.dofs] for loc, dg in zip(subsystem.locals, diags)]
    rows = np.concatenate([loc.dofs for loc in subsystem.locals])
    cols = np.concatenate([np.full(loc.n, s) for s, loc in enumerate(subsystem.locals)])
    W = sp.csr_matrix((np.concatenate(local), (rows, cols)), shape=(n, subsystem.n_subdomains))
    return WeightingOperator(mode, local, W)


@dataclass
class CoarseSpace:
    """Constraints, coarse basis and coarse operator.

    Attributes
    ----------
    objects : list
        The selected interface objects; object ``j`` is coarse DOF ``j``.
    constraints : list of sparse matrices
        ``C_s`` with one row per object touching subdomain ``s``.
    coarse_ids : list of int arrays
        Global coarse DOF of each row of ``C_s``.
    basis : list of ndarray
        ``Phi_s`` of shape ``(n_s, m_s)`` with ``C_s Phi_s = I``.
    matrix : sparse matrix
        ``A_c = sum_s R_s^T Phi_s^T A_s Phi_s R_s``.
    """

    selection: str
    objects: list
    constraints: list
    coarse_ids: list
    basis: list
    saddles: list
    matrix: sp.csr_matrix
    factor: CholeskyFactor

    @property
    def size(self):
        return len(self.objects)

    @property
    def per_subdomain(self):
        return np.array([ids.size for ids in self.coarse_ids], dtype=int)


def _constraint_rows(subsystem, objects):
    rows = [[] for _ in range(subsystem.n_subdomains)]
    for j, o in enumerate(objects):
        for s in o.neigh:
            rows[s].append(j)
    mats, ids = [], []
    for s, loc in enumerate(subsystem.locals):
        js = np.array(rows[s], dtype=int)
        r, c, v = [], [], []
        for i, j in enumerate(js):
            nodes = objects[j].nodes
            pos = np.searchsorted(loc.dofs, nodes)
            r.append(np.full(pos.size, i))
            c.append(pos)
            v.append(np.full(pos.size, 1.0 / pos.size))
        if js.size:
            C = sp.csr_matrix(
                (np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(js.size, loc.n)
            )
        else:
            C = sp.csr_matrix((0, loc.n))
        mats.append(C)
        ids.append(js)
    return mats, ids


def build_coarse_space(subsystem, objects, selection="cef"):
    """Coarse space from the objects whose kind is in ``selection``.

    Corners contribute nodal constraints and edges/faces the arithmetic mean
    of their nodal values.

    Raises
    ------
    SingularSaddleError
        If the constraints do not fix the kernel of some local matrix.
    """
    kinds = OBJECT_SETS[selection]
    chosen = [o for o in objects if o.kind in kinds]
    constraints, ids = _constraint_rows(subsystem, chosen)
    nc = len(chosen)
    saddles, basis = [], []
    r, c, v = [], [], []
    for s, loc in enumerate(subsystem.locals):
        C = constraints[s]
        sad = SaddleFactorization(loc.matrix, C, subdomain=s)
        m = C.shape[0]
        if m:
            Phi, _ = sad.solve_primal(np.zeros((loc.n, m)), np.eye(m))
            Phi = np.asarray(Phi).reshape(loc.n, m)
        else:
            Phi = np.zeros((loc.n, 0))
        Ac = Phi.T @ (loc.matrix @ Phi)
        gi = ids[s]
        r.append(np.repeat(gi, m))
        c.append(np.tile(gi, m))
        v.append(Ac.ravel())
        saddles.append(sad)
        basis.append(Phi)
    if nc:
        A_c = sp.csr_matrix(
            (np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(nc, nc)
        )
        A_c = 0.5 * (A_c + A_c.T)
    else:
        A_c = sp.csr_matrix((0, 0))
    return CoarseSpace(selection, chosen, constraints, ids, basis, saddles, A_c.tocsr(), CholeskyFactor(A_c))


class BDDCPreconditioner:
    """BDDC preconditioner for the free-DOF system ``A``.

    Parameters
    ----------
    matrix : sparse matrix
        The assembled operator over free DOFs.
    subsystem : SubAssembledSystem
    objects : InterfaceObjects
        Possibly split by one of the edge variants.
    selection : {'c', 'ce', 'cef'}
    weighting : str or WeightingOperator
    """

    def __init__(self, matrix, subsystem, objects, selection="cef", weighting="stiffness"):
        self.matrix = sp.csr_matrix(matrix)
        self.subsystem = subsystem
        self.n = subsystem.n
        if self.matrix.shape != (self.n, self.n):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match {self.n} DOFs")
        if isinstance(weighting, str):
            weighting = build_weighting(subsystem, weighting)
        self.weighting = weighting
        self.coarse = build_coarse_space(subsystem, objects, selection)

        mult = subsystem.multiplicity
        self._interior = []
        self._interior_factor = []
        self._has_interface = []
        for loc in subsystem.locals:
            inner = np.flatnonzero(mult[loc.dofs] == 1)
            self._interior.append(inner)
            self._interior_factor.append(CholeskyFactor(loc.matrix[inner][:, inner]))
            self._has_interface.append(inner.size < loc.n)

    @property
    def coarse_size(self):
        return self.coarse.size

    def interior_solve(self, r):
        """``I_0 A_0^{-1} I_0^T r``: independent solves on subdomain interiors."""
        z = np.zeros(self.n)
        for loc, inner, fac in zip(self.subsystem.locals, self._interior, self._interior_factor):
            if inner.size:
                g = loc.dofs[inner]
                z[g] = fac.solve(r[g])
        return z

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n,):
            raise ValueError(f"residual has shape {r.shape}, expected ({self.n},)")
        z0 = self.interior_solve(r)
        r1 = r - self.matrix @ z0

        cs = self.coarse
        local_sol = []
        coarse_rhs = np.zeros(cs.size)
        for s, loc in enumerate(self.subsystem.locals):
            if not self._has_interface[s]:
                local_sol.append(None)
                continue
            rs = self.weighting.local[s] * r1[loc.dofs]
            zs, _ = cs.saddles[s].solve_primal(rs)
            local_sol.append(zs)
            if cs.coarse_ids[s].size:
                np.add.at(coarse_rhs, cs.coarse_ids[s], cs.basis[s].T @ rs)
        zc = cs.factor.solve(coarse_rhs) if cs.size else coarse_rhs

        v = np.zeros(self.n)
        for s, loc in enumerate(self.subsystem.locals):
            zs = local_sol[s]
            if zs is None:
                continue
            if cs.coarse_ids[s].size:
                zs = zs + cs.basis[s] @ zc[cs.coarse_ids[s]]
            v[loc.dofs] += self.weighting.local[s] * zs
        v -= self.interior_solve(self.matrix @ v)
        return z0 + v

    __call__ = apply

    def as_linear_operator(self):
        from scipy.sparse.linalg import LinearOperator

        return LinearOperator((self.n, self.n), matvec=self.apply, dtype=float)
