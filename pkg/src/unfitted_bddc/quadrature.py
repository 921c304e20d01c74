"""Volume and interface quadrature on cut Cartesian cells.

A cut cell is split into simplices with a fixed Kuhn template (two triangles
or six tetrahedra sharing the main diagonal). On every simplex the level set
is replaced by its linear interpolant, the negative part is re-triangulated
and Gauss rules are mapped onto the pieces. The zero set of the interpolant
provides the interface facets.
"""

import functools
import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

from .geometry import local_vertex_offsets

__all__ = [
    "CutQuadrature",
    "gauss_legendre",
    "simplex_rule",
    "tensor_rule",
    "full_cell_quadrature",
    "build_cut_quadrature",
    "kuhn_simplices",
]

logger = logging.getLogger(__name__)

DEGENERATE_VOLUME = 1e-14


@dataclass
class CutQuadrature:
    """Quadrature on ``e cap Omega`` and on the interface inside ``e``.

    Points are physical coordinates. Normals point from ``phi < 0`` to
    ``phi > 0``.
    """

    points: np.ndarray
    weights: np.ndarray
    surface_points: np.ndarray
    surface_weights: np.ndarray
    surface_normals: np.ndarray

    @property
    def volume(self):
        return float(self.weights.sum())

    @property
    def area(self):
        return float(self.surface_weights.sum())

    @property
    def has_surface(self):
        return self.surface_weights.size > 0


@functools.lru_cache(maxsize=None)
def gauss_legendre(n):
    """``n``-point Gauss rule on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@functools.lru_cache(maxsize=None)
def _gauss_jacobi(n, alpha):
    # weight (1 - u)**alpha on [0, 1]
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@functools.lru_cache(maxsize=None)
def tensor_rule(dim, n):
    x, w = gauss_legendre(n)
    pts = np.array(list(itertools.product(x, repeat=dim)))
    wts = np.array([np.prod(c) for c in itertools.product(w, repeat=dim)])
    return pts, wts


@functools.lru_cache(maxsize=None)
def simplex_rule(dim, n):
    """Conical product rule on the unit simplex, exact to degree ``2n - 1``.

    Returned as barycentric-free reference points on the simplex with
    vertices ``0, e_1, ..., e_dim`` and weights summing to one.
    """
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    if dim == 1:
        x, w = gauss_legendre(n)
        return x[:, None], w.copy()
    if dim == 2:
        u, wu = _gauss_jacobi(n, 1)
        v, wv = gauss_legendre(n)
        U, V = np.meshgrid(u, v, indexing="ij")
        pts = np.stack([U.ravel(), (V * (1.0 - U)).ravel()], axis=-1)
        wts = np.outer(wu, wv).ravel()
    elif dim == 3:
        u, wu = _gauss_jacobi(n, 2)
        v, wv = _gauss_jacobi(n, 1)
        s, ws = gauss_legendre(n)
        U, V, S = np.meshgrid(u, v, s, indexing="ij")
        pts = np.stack(
            [U.ravel(), (V * (1.0 - U)).ravel(), (S * (1.0 - U) * (1.0 - V)).ravel()], axis=-1
        )
        wts = (wu[:, None, None] * wv[None, :, None] * ws[None, None, :]).ravel()
    else:
        raise ValueError(f"unsupported simplex dimension {dim}")
    return pts, wts / wts.sum()


@functools.lru_cache(maxsize=None)
def kuhn_simplices(dim):
    """Local vertex indices of the Kuhn split of the reference cell."""
    offs = local_vertex_offsets(dim)
    lookup = {tuple(o): i for i, o in enumerate(offs)}
    simplices = []
    for perm in itertools.permutations(range(dim)):
        v = np.zeros(dim, dtype=int)
        verts = [lookup[tuple(v)]]
        for axis in perm:
            v[axis] = 1
            verts.append(lookup[tuple(v)])
        simplices.append(verts)
    return np.array(simplices, dtype=int)


def _simplex_measure(verts):
    """Measure of ``k``-simplices embedded in ``R^d``; ``verts`` shape ``(m, k+1, d)``."""
    E = verts[:, 1:, :] - verts[:, :1, :]
    k = E.shape[1]
    if k == E.shape[2]:
        return np.abs(np.linalg.det(E)) / _fact(k)
    G = np.einsum("mid,mjd->mij", E, E)
    return np.sqrt(np.maximum(np.linalg.det(G), 0.0)) / _fact(k)


def _fact(k):
    return float(np.prod(np.arange(1, k + 1))) if k > 0 else 1.0


def _map_rule(simplices, order):
    """Map the reference rule onto simplices ``(m, k+1, d)``."""
    if simplices.shape[0] == 0:
        d = simplices.shape[2]
        return np.zeros((0, d)), np.zeros(0)
    k = simplices.shape[1] - 1
    ref_pts, ref_w = simplex_rule(k, order)
    E = simplices[:, 1:, :] - simplices[:, :1, :]
    pts = simplices[:, None, 0, :] + np.einsum("qk,mkd->mqd", ref_pts, E)
    meas = _simplex_measure(simplices)
    wts = meas[:, None] * ref_w[None, :]
    return pts.reshape(-1, simplices.shape[2]), wts.ravel()


def _prism_tets(a, b):
    """Split the prism with triangle ``a`` over triangle ``b`` into three tets."""
    return [
        [a[0], a[1], a[2], b[0]],
        [a[1], a[2], b[0], b[1]],
        [a[2], b[0], b[1], b[2]],
    ]


def _cut_triangle(x, phi):
    neg = phi < 0.0
    nneg = int(neg.sum())
    if nneg == 3:
        return [x], []
    if nneg == 0:
        return [], []

    def cross(i, j):
        t = phi[i] / (phi[i] - phi[j])
        return x[i] + t * (x[j] - x[i])

    if nneg == 1:
        a = int(np.flatnonzero(neg)[0])
        b, c = [i for i in range(3) if i != a]
        pab, pac = cross(a, b), cross(a, c)
        return [np.array([x[a], pab, pac])], [np.array([pab, pac])]
    c = int(np.flatnonzero(~neg)[0])
    a, b = [i for i in range(3) if i != c]
    pac, pbc = cross(a, c), cross(b, c)
    pieces = [np.array([x[a], x[b], pbc]), np.array([x[a], pbc, pac])]
    return pieces, [np.array([pac, pbc])]


def _cut_tet(x, phi):
    neg = phi < 0.0
    nneg = int(neg.sum())
    if nneg == 4:
        return [x], []
    if nneg == 0:
        return [], []

    def cross(i, j):
        t = phi[i] / (phi[i] - phi[j])
        return x[i] + t * (x[j] - x[i])

    inside = [int(i) for i in np.flatnonzero(neg)]
    outside = [int(i) for i in np.flatnonzero(~neg)]
    if nneg == 1:
        a = inside[0]
        p = [cross(a, j) for j in outside]
        return [np.array([x[a], *p])], [np.array(p)]
    if nneg == 3:
        d = outside[0]
        p = [cross(i, d) for i in inside]
        tets = _prism_tets([x[i] for i in inside], p)
        return [np.array(t) for t in tets], [np.array(p)]
    a, b = inside
    c, d = outside
    pac, pad, pbc, pbd = cross(a, c), cross(a, d), cross(b, c), cross(b, d)
    tets = _prism_tets([x[a], pac, pad], [x[b], pbc, pbd])
    facets = [np.array([pac, pad, pbd]), np.array([pac, pbd, pbc])]
    return [np.array(t) for t in tets], facets


def _linear_gradient(x, phi):
    E = x[1:] - x[0]
    return np.linalg.solve(E, phi[1:] - phi[0])


def tensor_points(lower, h, order):
    """Tensor Gauss points and weights for cells with lower corners ``lower``."""
    lower = np.atleast_2d(lower)
    dim = lower.shape[1]
    ref, w = tensor_rule(dim, order)
    pts = lower[:, None, :] + ref[None, :, :] * h
    return pts, np.broadcast_to(w * np.prod(h), pts.shape[:2]).copy()


def full_cell_quadrature(mesh, cell, order=2):
    """Tensor-product Gauss rule on the whole cell; no interface facets."""
    pts, wts = tensor_points(mesh.cell_lower(cell)[None], mesh.h, order)
    d = mesh.dim
    return CutQuadrature(pts[0], wts[0], np.zeros((0, d)), np.zeros(0), np.zeros((0, d)))


def build_cut_quadrature(mesh, cell, order=2, phi=None):
    """Quadrature of the negative part of ``cell`` under the linear level-set model.

    ``phi`` defaults to the (snapped) vertex values stored on the mesh.
    Pieces with measure below ``1e-14 |e|`` are dropped.
    """
    if order < 1:
        raise ValueError("quadrature order must be positive")
    dim = mesh.dim
    lower = mesh.cell_lower(cell)
    verts = lower + local_vertex_offsets(dim) * mesh.h
    phi = mesh.cell_phi(cell) if phi is None else np.asarray(phi, dtype=float)
    cutter = _cut_triangle if dim == 2 else _cut_tet
    vol_pieces, facets, normals = [], [], []
    for simplex in kuhn_simplices(dim):
        xs, ps = verts[simplex], phi[simplex]
        pieces, faces = cutter(xs, ps)
        vol_pieces.extend(pieces)
        if faces:
            g = _linear_gradient(xs, ps)
            n = g / np.linalg.norm(g)
            facets.extend(faces)
            normals.extend([n] * len(faces))
    cell_vol = mesh.cell_volume
    if vol_pieces:
        pieces = np.array(vol_pieces)
        meas = _simplex_measure(pieces)
        keep = meas >= DEGENERATE_VOLUME * cell_vol
        if not keep.all():
            logger.debug("cell %d: dropped %d degenerate pieces", cell, int((~keep).sum()))
        pts, wts = _map_rule(pieces[keep], order)
    else:
        pts, wts = np.zeros((0, dim)), np.zeros(0)
    if facets:
        fac = np.array(facets)
        nrm = np.array(normals)
        area = _simplex_measure(fac)
        keep = area > 0.0
        spts, swts = _map_rule(fac[keep], order)
        nq = simplex_rule(dim - 1, order)[1].size
        snrm = np.repeat(nrm[keep], nq, axis=0)
    else:
        spts, swts, snrm = np.zeros((0, dim)), np.zeros(0), np.zeros((0, dim))
    return CutQuadrature(pts, wts, spts, swts, snrm)
