"""Q1 finite elements on active cells with Nitsche terms on the cut boundary.

The cut part of the boundary (``phi = 0`` inside cut cells) carries either a
Neumann condition or a weak Dirichlet condition imposed with Nitsche's
method. Boundary faces of the background box that lie in the domain are
strong Dirichlet boundaries and are eliminated from the system.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import CellKind, local_vertex_offsets
from .linalg import KERNEL_TOL, constant_kernel_eigs_max, sym_from_triplets
from .quadrature import build_cut_quadrature, tensor_points, tensor_rule

__all__ = [
    "Manufactured",
    "q1_shape",
    "reference_stiffness",
    "ElementContribution",
    "ElementSet",
    "GlobalSystem",
    "LocalProblem",
    "SubAssembledSystem",
    "SingularSystemError",
    "nitsche_beta",
    "assemble_element",
    "assemble_elements",
    "assemble_global",
    "assemble_subassembled",
    "manufactured",
    "error_norms",
]

logger = logging.getLogger(__name__)

BC_MODES = ("neumann", "nitsche")


class SingularSystemError(RuntimeError):
    pass


class Manufactured:
    """``u(x) = sin(k |x|)`` with ``k = 5 pi`` and ``f = -lap u``.

    ``f`` behaves like ``1/|x|`` at the origin; the value returned there is
    the regular part only (the point never coincides with a Gauss point).
    """

    def __init__(self, dim=3, wavenumber=5.0 * np.pi):
        self.dim = dim
        self.k = float(wavenumber)

    def u(self, x):
        return np.sin(self.k * np.linalg.norm(x, axis=-1))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return self.k * np.cos(self.k * r) * x / np.where(r > 0.0, r, 1.0)

    def f(self, x):
        r = np.linalg.norm(x, axis=-1)
        k = self.k
        safe = np.where(r > 0.0, r, 1.0)
        singular = np.where(r > 0.0, (self.dim - 1) * k * np.cos(k * r) / safe, 0.0)
        return k * k * np.sin(k * r) - singular

    def dirichlet(self, x):
        return self.u(x)

    def neumann(self, x, n):
        return np.sum(self.grad(x) * n, axis=-1)


def manufactured(dim=3):
    return Manufactured(dim)


def q1_shape(xi):
    """Q1 shape functions and reference gradients at points ``xi`` in ``[0,1]^d``.

    Returns ``N`` of shape ``(..., 2**d)`` and ``dN`` of shape ``(..., 2**d, d)``.
    """
    xi = np.asarray(xi, dtype=float)
    d = xi.shape[-1]
    offs = local_vertex_offsets(d).astype(bool)
    f = np.where(offs, xi[..., None, :], 1.0 - xi[..., None, :])
    sign = np.where(offs, 1.0, -1.0)
    N = f.prod(axis=-1)
    dN = np.empty(f.shape)
    for a in range(d):
        others = np.delete(f, a, axis=-1).prod(axis=-1)
        dN[..., a] = sign[:, a] * others
    return N, dN


def reference_stiffness(h):
    """Exact Q1 stiffness matrix of a full cell with edge lengths ``h``."""
    h = np.asarray(h, dtype=float)
    pts, wts = tensor_rule(h.size, 2)
    _, dN = q1_shape(pts)
    G = dN / h
    return np.einsum("q,qad,qbd->ab", wts * np.prod(h), G, G)


def _physical_shape(mesh, cell, points):
    xi = (points - mesh.cell_lower(cell)) / mesh.h
    N, dN = q1_shape(xi)
    return N, dN / mesh.h


def _volume_form(mesh, cell, quad):
    _, G = _physical_shape(mesh, cell, quad.points)
    return np.einsum("q,qad,qbd->ab", quad.weights, G, G)


def _surface_terms(mesh, cell, quad):
    N, G = _physical_shape(mesh, cell, quad.surface_points)
    dn = np.einsum("sad,sd->sa", G, quad.surface_normals)
    return N, dn


def nitsche_beta(mesh, cell, quad, safety=2.0, kernel_tol=KERNEL_TOL):
    """Penalty ``safety * lambda_max`` of the pencil ``(B_e, D_e)`` for a cut cell.

    ``D_e`` is the gradient form on ``e cap Omega`` and ``B_e`` the product of
    normal derivatives on the boundary piece inside ``e``.
    """
    if not quad.has_surface:
        return 0.0
    D = _volume_form(mesh, cell, quad)
    _, dn = _surface_terms(mesh, cell, quad)
    B = np.einsum("s,sa,sb->ab", quad.surface_weights, dn, dn)
    return safety * constant_kernel_eigs_max(B, D, kernel_tol)


@dataclass
class ElementContribution:
    cell: int
    matrix: np.ndarray
    rhs: np.ndarray


def assemble_element(mesh, cell, quad, problem, bc="nitsche", beta=None):
    """Element matrix and vector on ``cell`` for the given quadrature.

    Raises
    ------
    ValueError
        If the cell carries a Nitsche boundary piece but no ``beta`` was given.
    """
    N, G = _physical_shape(mesh, cell, quad.points)
    matrix = np.einsum("q,qad,qbd->ab", quad.weights, G, G)
    rhs = np.einsum("q,qa->a", quad.weights * problem.f(quad.points), N)
    if quad.has_surface:
        Ns, dn = _surface_terms(mesh, cell, quad)
        ws = quad.surface_weights
        xs = quad.surface_points
        if bc == "neumann":
            rhs += np.einsum("s,sa->a", ws * problem.neumann(xs, quad.surface_normals), Ns)
        elif bc == "nitsche":
            if beta is None:
                raise ValueError(f"cell {cell} needs a Nitsche penalty")
            mass = np.einsum("s,sa,sb->ab", ws, Ns, Ns)
            cons = np.einsum("s,sa,sb->ab", ws, Ns, dn)
            matrix += beta * mass - cons - cons.T
            gd = ws * problem.dirichlet(xs)
            rhs += np.einsum("s,sa->a", gd, beta * Ns - dn)
        else:
            raise ValueError(f"unknown boundary mode {bc!r}")
    return ElementContribution(int(cell), 0.5 * (matrix + matrix.T), rhs)


@dataclass
class ElementSet:
    """Stacked element contributions over the active cells."""

    cells: np.ndarray
    dofs: np.ndarray
    matrices: np.ndarray
    rhs: np.ndarray
    beta: np.ndarray
    quadratures: dict = field(default_factory=dict)


def assemble_elements(mesh, problem, bc="nitsche", order=3, beta_safety=2.0, full_elements=False):
    """Element contributions of every active cell.

    With ``full_elements`` the cut cells are integrated as whole cells and
    carry no boundary terms (the staircase reference discretization).
    """
    if bc not in BC_MODES:
        raise ValueError(f"unknown boundary mode {bc!r}; expected one of {BC_MODES}")
    active = mesh.active_cells
    if full_elements:
        full = active
        cut = np.zeros(0, dtype=int)
    else:
        full = mesh.interior_cells
        cut = mesh.cut_cells
    L = 2**mesh.dim
    nact = active.size
    position = np.full(mesh.n_cells, -1)
    position[active] = np.arange(nact)
    matrices = np.empty((nact, L, L))
    rhs = np.empty((nact, L))
    beta = np.zeros(nact)

    K = reference_stiffness(mesh.h)
    pts, wts = tensor_points(mesh.cell_lower(full), mesh.h, order)
    ref = tensor_rule(mesh.dim, order)[0]
    N, _ = q1_shape(ref)
    matrices[position[full]] = K
    rhs[position[full]] = np.einsum("cq,qa->ca", wts * problem.f(pts), N)

    quads = {}
    for c in cut:
        quad = build_cut_quadrature(mesh, c, order)
        b = None
        if bc == "nitsche" and quad.has_surface:
            b = nitsche_beta(mesh, c, quad, beta_safety)
            beta[position[c]] = b
        contrib = assemble_element(mesh, c, quad, problem, bc, b)
        matrices[position[c]] = contrib.matrix
        rhs[position[c]] = contrib.rhs
        quads[int(c)] = quad
    return ElementSet(active, mesh.cell_dofs(active), matrices, rhs, beta, quads)


@dataclass
class GlobalSystem:
    """Assembled operator over the free DOFs.

    ``free`` and ``fixed`` index active DOFs; fixed DOFs hold strong Dirichlet
    values (or the pinned value in pure Neumann problems).
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    n_active: int
    mesh: object = None
    elements: ElementSet = None
    problem: object = None
    bc: str = "nitsche"
    pinned: int = -1
    full_elements: bool = False
    free_index: np.ndarray = None

    @property
    def n(self):
        return self.free.size

    def expand(self, x):
        out = np.empty(self.n_active)
        out[self.free] = x
        out[self.fixed] = self.fixed_values
        return out


def _box_dirichlet_nodes(mesh, levelset):
    """Active DOFs on background-box faces whose centroid lies in the domain."""
    dim = mesh.dim
    offs = local_vertex_offsets(dim)
    active = mesh.active_cells
    idx = mesh.cell_index(active)
    lower = mesh.cell_lower(active)
    dofs = mesh.cell_dofs(active)
    found = []
    for axis in range(dim):
        for side, at in ((0, 0), (1, mesh.cells[axis] - 1)):
            sel = idx[:, axis] == at
            if not sel.any():
                continue
            centroid = lower[sel] + 0.5 * mesh.h
            centroid[:, axis] = lower[sel, axis] + side * mesh.h[axis]
            inside = levelset.value(centroid) < 0.0
            face_local = np.flatnonzero(offs[:, axis] == side)
            found.append(dofs[sel][inside][:, face_local].ravel())
    if not found:
        return np.zeros(0, dtype=int)
    return np.unique(np.concatenate(found))


def _staircase_boundary_nodes(mesh):
    """Active DOFs on faces between active cells and exterior/outside cells."""
    dim = mesh.dim
    offs = local_vertex_offsets(dim)
    active_mask = (mesh.cell_kind != CellKind.EXTERIOR).reshape(mesh.cells)
    padded = np.pad(active_mask, 1, constant_values=False)
    active = mesh.active_cells
    idx = mesh.cell_index(active)
    dofs = mesh.cell_dofs(active)
    found = []
    for axis in range(dim):
        for side in (0, 1):
            nb = idx + 1
            nb[:, axis] += 1 if side else -1
            open_face = ~padded[tuple(nb.T)]
            face_local = np.flatnonzero(offs[:, axis] == side)
            found.append(dofs[open_face][:, face_local].ravel())
    return np.unique(np.concatenate(found))


def _pin_node(mesh, levelset, candidates):
    coords = mesh.dof_coords()
    inner = mesh.interior_cells
    if inner.size:
        center = (mesh.cell_lower(inner) + 0.5 * mesh.h).mean(axis=0)
    else:
        center = coords.mean(axis=0)
    pool = candidates[levelset.value(coords[candidates]) < 0.0]
    if pool.size == 0:
        pool = candidates
    dist = np.linalg.norm(coords[pool] - center, axis=-1)
    return int(pool[np.argmin(dist)])


def assemble_global(mesh, levelset, problem, bc="nitsche", order=3, beta_safety=2.0,
                    full_elements=False, pin=True, elements=None):
    """Assemble the global system and eliminate strong Dirichlet DOFs.

    Strong Dirichlet DOFs are the nodes of background-box faces inside the
    domain (for ``full_elements`` with ``bc='nitsche'`` the whole staircase
    boundary). Without any Dirichlet DOF and with a Neumann cut boundary one
    interior node is pinned to the exact solution, unless ``pin`` is false in
    which case the singular problem is rejected.
    """
    if elements is None:
        elements = assemble_elements(mesh, problem, bc, order, beta_safety, full_elements)
    n = mesh.n_dofs
    fixed = _box_dirichlet_nodes(mesh, levelset)
    if full_elements and bc == "nitsche":
        fixed = np.union1d(fixed, _staircase_boundary_nodes(mesh))
    pinned = -1
    if fixed.size == 0 and (bc == "neumann" or full_elements):
        if not pin:
            raise SingularSystemError("pure Neumann problem without a pinned node is singular")
        pinned = _pin_node(mesh, levelset, np.arange(n))
        fixed = np.array([pinned])
    coords = mesh.dof_coords(fixed)
    values = problem.dirichlet(coords) if fixed.size else np.zeros(0)

    rows = np.repeat(elements.dofs, elements.dofs.shape[1], axis=1)
    cols = np.tile(elements.dofs, (1, elements.dofs.shape[1]))
    A = sym_from_triplets(rows, cols, elements.matrices, n)
    b = np.bincount(elements.dofs.ravel(), weights=elements.rhs.ravel(), minlength=n)

    is_free = np.ones(n, dtype=bool)
    is_free[fixed] = False
    free = np.flatnonzero(is_free)
    b_free = b[free] - A[free][:, fixed] @ values
    A_free = A[free][:, free].tocsr()
    free_index = np.full(n, -1)
    free_index[free] = np.arange(free.size)
    return GlobalSystem(
        matrix=A_free,
        rhs=b_free,
        free=free,
        fixed=fixed,
        fixed_values=values,
        n_active=n,
        mesh=mesh,
        elements=elements,
        problem=problem,
        bc=bc,
        pinned=pinned,
        full_elements=full_elements,
        free_index=free_index,
    )


@dataclass
class LocalProblem:
    """Sub-assembled operator of one subdomain over its free DOFs."""

    dofs: np.ndarray
    matrix: sp.csr_matrix
    rhs: np.ndarray

    @property
    def n(self):
        return self.dofs.size


@dataclass
class SubAssembledSystem:
    locals: list
    incidence: sp.csr_matrix
    n: int

    @property
    def n_subdomains(self):
        return len(self.locals)

    @property
    def multiplicity(self):
        return np.asarray(self.incidence.sum(axis=1)).ravel().astype(int)

    @property
    def interface(self):
        return np.flatnonzero(self.multiplicity > 1)

    def neigh(self, dof):
        row = self.incidence.getrow(dof)
        return np.sort(row.indices)

    def scatter(self, s):
        """Boolean restriction from global free DOFs to subdomain ``s``."""
        loc = self.locals[s]
        return sp.csr_matrix((np.ones(loc.n), (np.arange(loc.n), loc.dofs)), shape=(loc.n, self.n))


def assemble_subassembled(system, partition):
    """Route element contributions to their owning subdomains.

    Raises
    ------
    ValueError
        If an active cell has no owner in ``partition``.
    """
    el = system.elements
    owner = partition.cell_subdomain[el.cells]
    if (owner < 0).any():
        raise ValueError(f"cell {el.cells[np.argmax(owner < 0)]} has no subdomain")
    fi = system.free_index[el.dofs]
    fixed_val = np.zeros(system.n_active)
    fixed_val[system.fixed] = system.fixed_values
    lifting = np.einsum("cab,cb->ca", el.matrices, fixed_val[el.dofs])
    rhs_e = el.rhs - lifting
    L = el.dofs.shape[1]
    locals_ = []
    inc_rows, inc_cols = [], []
    order = np.argsort(owner, kind="stable")
    bounds = np.searchsorted(owner[order], np.arange(partition.n_subdomains + 1))
    for s in range(partition.n_subdomains):
        cells = order[bounds[s]:bounds[s + 1]]
        f = fi[cells]
        dofs = np.unique(f[f >= 0])
        loc = np.searchsorted(dofs, np.where(f >= 0, f, 0))
        valid = f >= 0
        r = np.repeat(loc, L, axis=1)
        c = np.tile(loc, (1, L))
        m = (valid[:, :, None] & valid[:, None, :]).reshape(len(cells), -1)
        A = sym_from_triplets(r[m], c[m], el.matrices[cells].reshape(len(cells), -1)[m], dofs.size)
        rhs = np.bincount(loc[valid], weights=rhs_e[cells][valid], minlength=dofs.size)
        locals_.append(LocalProblem(dofs, A, rhs))
        inc_rows.append(dofs)
        inc_cols.append(np.full(dofs.size, s))
    rows = np.concatenate(inc_rows)
    cols = np.concatenate(inc_cols)
    incidence = sp.csr_matrix(
        (np.ones(rows.size, dtype=np.int8), (rows, cols)),
        shape=(system.n, partition.n_subdomains),
    )
    return SubAssembledSystem(locals_, incidence, system.n)


def error_norms(system, solution, exact=None, order=3):
    """``L2`` error and ``H1`` seminorm error of a free-DOF solution vector."""
    mesh = system.mesh
    exact = exact or system.problem
    values = system.expand(solution)
    el = system.elements
    coeff = values[el.dofs]
    position = {int(c): i for i, c in enumerate(el.cells)}

    full = el.cells if system.full_elements else mesh.interior_cells
    ref, _ = tensor_rule(mesh.dim, order)
    N, dN = q1_shape(ref)
    G = dN / mesh.h
    pts, wts = tensor_points(mesh.cell_lower(full), mesh.h, order)
    idx = np.array([position[int(c)] for c in full], dtype=int)
    uh = coeff[idx] @ N.T
    guh = np.einsum("ca,qad->cqd", coeff[idx], G)
    e0 = np.sum(wts * (uh - exact.u(pts)) ** 2)
    e1 = np.sum(wts * np.sum((guh - exact.grad(pts)) ** 2, axis=-1))

    if not system.full_elements:
        for c in mesh.cut_cells:
            quad = build_cut_quadrature(mesh, c, order)
            Nc, Gc = _physical_shape(mesh, c, quad.points)
            a = coeff[position[int(c)]]
            uh = Nc @ a
            guh = np.einsum("a,qad->qd", a, Gc)
            e0 += np.sum(quad.weights * (uh - exact.u(quad.points)) ** 2)
            e1 += np.sum(quad.weights * np.sum((guh - exact.grad(quad.points)) ** 2, axis=-1))
    return float(np.sqrt(e0)), float(np.sqrt(e1))
