"""Level-set geometries and Cartesian background meshes.

The physical domain is ``{phi < 0}`` intersected with the background box.
Cells are classified from the signs of ``phi`` at their vertices, which is
the same piecewise-linear boundary model the cut quadrature integrates.
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CellKind",
    "LevelSet",
    "Constant",
    "HalfSpace",
    "Sphere",
    "Box",
    "Complement",
    "Intersection",
    "Union",
    "Popcorn",
    "Spiral",
    "GEOMETRIES",
    "make_geometry",
    "BackgroundMesh",
    "classify_cells",
    "eta",
    "local_vertex_offsets",
    "write_classification_csv",
]

TOL_GEO = 1e-12


class CellKind(enum.IntEnum):
    EXTERIOR = 0
    INTERIOR = 1
    CUT = 2


class LevelSet:
    """Scalar function whose negative set is the domain."""

    name = "levelset"

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)

    def translated(self, shift):
        return _Translated(self, shift)


class _Translated(LevelSet):
    def __init__(self, base, shift):
        self.base = base
        self.shift = np.asarray(shift, dtype=float)
        self.name = base.name

    def value(self, x):
        return self.base.value(np.asarray(x) - self.shift)

    def gradient(self, x):
        return self.base.gradient(np.asarray(x) - self.shift)


class Constant(LevelSet):
    def __init__(self, c):
        self.c = float(c)
        self.name = f"constant({c:g})"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.c)

    def gradient(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


class HalfSpace(LevelSet):
    """``phi(x) = n . x - offset`` with unit normal ``n``."""

    def __init__(self, normal, offset):
        n = np.asarray(normal, dtype=float)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset)
        self.name = "halfspace"

    def value(self, x):
        return np.asarray(x, dtype=float) @ self.normal - self.offset

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.normal, x.shape).copy()


class Sphere(LevelSet):
    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.name = "sphere"

    def value(self, x):
        return np.linalg.norm(np.asarray(x, dtype=float) - self.center, axis=-1) - self.radius

    def gradient(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        return d / np.where(r > 0.0, r, 1.0)


class Box(LevelSet):
    """Axis-aligned box ``max_i |x_i - c_i| - a_i``."""

    def __init__(self, center, half_widths):
        self.center = np.asarray(center, dtype=float)
        self.half = np.broadcast_to(np.asarray(half_widths, dtype=float), self.center.shape)
        self.name = "box"

    def _parts(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return d, np.abs(d) - self.half

    def value(self, x):
        return self._parts(x)[1].max(axis=-1)

    def gradient(self, x):
        d, q = self._parts(x)
        k = q.argmax(axis=-1)
        g = np.zeros_like(d)
        np.put_along_axis(g, k[..., None], np.sign(np.take_along_axis(d, k[..., None], -1)), -1)
        return g


class Complement(LevelSet):
    def __init__(self, base):
        self.base = base
        self.name = f"not-{base.name}"

    def value(self, x):
        return -self.base.value(x)

    def gradient(self, x):
        return -self.base.gradient(x)


class _Boolean(LevelSet):
    pick = None

    def __init__(self, *parts):
        self.parts = parts

    def _stack(self, x):
        return np.stack([p.value(x) for p in self.parts], axis=0)

    def value(self, x):
        return self.pick(self._stack(x), axis=0)

    def gradient(self, x):
        vals = self._stack(x)
        k = (np.argmax if self.pick is np.max else np.argmin)(vals, axis=0)
        grads = np.stack([p.gradient(x) for p in self.parts], axis=0)
        return np.take_along_axis(grads, k[None, ..., None], axis=0)[0]


class Intersection(_Boolean):
    pick = staticmethod(np.max)
    name = "intersection"


class Union(_Boolean):
    pick = staticmethod(np.min)
    name = "union"


class Popcorn(LevelSet):
    """Sphere of radius ``r0`` with twelve Gaussian bumps (CutFEM benchmark)."""

    def __init__(self, r0=0.6, amplitude=2.0, sigma=0.2, center=(0.0, 0.0, 0.0)):
        self.r0 = float(r0)
        self.amplitude = float(amplitude)
        self.sigma = float(sigma)
        self.center = np.asarray(center, dtype=float)
        self.name = "popcorn"
        s = self.r0 / np.sqrt(5.0)
        pts = []
        for k in range(5):
            a = 2.0 * k * np.pi / 5.0
            pts.append([2.0 * s * np.cos(a), 2.0 * s * np.sin(a), s])
        for k in range(5, 10):
            a = (2.0 * (k - 5) - 1.0) * np.pi / 5.0
            pts.append([2.0 * s * np.cos(a), 2.0 * s * np.sin(a), -s])
        pts.append([0.0, 0.0, self.r0])
        pts.append([0.0, 0.0, -self.r0])
        self.bumps = np.array(pts)

    def value(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(d, axis=-1)
        q = d[..., None, :] - self.bumps
        g = np.exp(-np.sum(q * q, axis=-1) / self.sigma**2)
        return r - self.r0 - self.amplitude * g.sum(axis=-1)

    def gradient(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        q = d[..., None, :] - self.bumps
        g = np.exp(-np.sum(q * q, axis=-1) / self.sigma**2)
        bump = (-2.0 / self.sigma**2) * np.sum(g[..., None] * q, axis=-2)
        return d / np.where(r > 0.0, r, 1.0) - self.amplitude * bump


class Spiral(LevelSet):
    """Tube of radius ``tube`` around a helix, distance taken to a polyline."""

    def __init__(self, radius=0.6, tube=0.2, pitch=0.5, turns=2.0, samples=400):
        self.name = "spiral"
        t = np.linspace(0.0, 2.0 * np.pi * turns, samples)
        height = pitch * turns
        self.path = np.stack(
            [radius * np.cos(t), radius * np.sin(t), pitch * t / (2.0 * np.pi) - 0.5 * height],
            axis=-1,
        )
        self.tube = float(tube)

    def _nearest(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        out = np.empty(flat.shape[0], dtype=int)
        for start in range(0, flat.shape[0], 4096):
            chunk = flat[start:start + 4096]
            d2 = np.sum((chunk[:, None, :] - self.path[None]) ** 2, axis=-1)
            out[start:start + 4096] = d2.argmin(axis=1)
        return self.path[out].reshape(x.shape)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self._nearest(x), axis=-1) - self.tube

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        d = x - self._nearest(x)
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        return d / np.where(r > 0.0, r, 1.0)


def _hollow_block(center=(0.0, 0.0, 0.0), half=0.75, hole=0.5):
    c = np.asarray(center, dtype=float)
    ls = Intersection(Box(c, half), Complement(Sphere(c, hole)))
    ls.name = "block"
    return ls


def _sphere(dim=3, radius=0.7, center=None):
    return Sphere(np.zeros(dim) if center is None else center, radius)


@dataclass
class GeometrySetup:
    levelset: LevelSet
    lower: np.ndarray
    upper: np.ndarray
    base_cells: tuple


def _geometry_sphere(dim=3, radius=0.7):
    return GeometrySetup(_sphere(dim, radius), -np.ones(dim), np.ones(dim), (16,) * dim)


def _geometry_popcorn(r0=0.6, amplitude=2.0, sigma=0.2):
    return GeometrySetup(Popcorn(r0, amplitude, sigma), -0.9 * np.ones(3), 0.9 * np.ones(3), (16,) * 3)


def _geometry_block(half=0.75, hole=0.5):
    return GeometrySetup(_hollow_block(half=half, hole=hole), -np.ones(3), np.ones(3), (16,) * 3)


def _geometry_array(half=0.75, hole=0.5, copies=3, spacing=2.0):
    offsets = (np.arange(copies) - 0.5 * (copies - 1)) * spacing
    parts = [
        _hollow_block(center=(a, b, c), half=half, hole=hole)
        for a in offsets for b in offsets for c in offsets
    ]
    ls = Union(*parts)
    ls.name = "array"
    ext = 0.5 * copies * spacing
    return GeometrySetup(ls, -ext * np.ones(3), ext * np.ones(3), (48,) * 3)


def _geometry_spiral(radius=0.6, tube=0.2, pitch=0.5, turns=2.0):
    return GeometrySetup(Spiral(radius, tube, pitch, turns), -np.ones(3), np.ones(3), (16,) * 3)


def _geometry_rectangle(width=2.0, height=1.0, left=0.5, eps=0.0):
    """Box truncated on the left at ``x = left - eps`` (the moving side)."""
    ls = HalfSpace([-1.0, 0.0], -(left - eps))
    ls.name = "rectangle"
    return GeometrySetup(ls, np.zeros(2), np.array([width, height]), (32, 16))


def _geometry_disk(radius=0.7):
    return GeometrySetup(_sphere(2, radius), -np.ones(2), np.ones(2), (16, 16))


def _geometry_annulus(outer=0.7, inner=0.25):
    """Disk with a concentric hole, keeping the origin outside the domain."""
    ls = Intersection(_sphere(2, outer), Complement(_sphere(2, inner)))
    ls.name = "annulus"
    return GeometrySetup(ls, -np.ones(2), np.ones(2), (16, 16))


def _geometry_box(dim=2):
    ls = Constant(-1.0)
    ls.name = "box"
    return GeometrySetup(ls, np.zeros(dim), np.ones(dim), (4,) * dim)


GEOMETRIES = {
    "sphere": _geometry_sphere,
    "popcorn": _geometry_popcorn,
    "block": _geometry_block,
    "array": _geometry_array,
    "spiral": _geometry_spiral,
    "rectangle": _geometry_rectangle,
    "disk": _geometry_disk,
    "annulus": _geometry_annulus,
    "box": _geometry_box,
}


def make_geometry(name, **params):
    """Look up a catalog shape; returns a :class:`GeometrySetup`."""
    try:
        factory = GEOMETRIES[name]
    except KeyError:
        raise ValueError(f"unknown geometry {name!r}; choose from {sorted(GEOMETRIES)}") from None
    return factory(**params)


def local_vertex_offsets(dim):
    """Vertex ``l`` of the reference cell sits at bit ``a`` of ``l`` along axis ``a``."""
    return np.array([[(l >> a) & 1 for a in range(dim)] for l in range(2**dim)], dtype=int)


@dataclass
class BackgroundMesh:
    """Cartesian grid with cell classification and active-node numbering.

    Cells and nodes are numbered lexicographically (C order over the index
    tuple). ``node_dof[g]`` is the active DOF of global node ``g`` or -1.
    """

    origin: np.ndarray
    h: np.ndarray
    cells: tuple
    node_phi: np.ndarray
    cell_kind: np.ndarray
    node_dof: np.ndarray
    dof_node: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def dim(self):
        return len(self.cells)

    @property
    def n_cells(self):
        return int(np.prod(self.cells))

    @property
    def node_shape(self):
        return tuple(c + 1 for c in self.cells)

    @property
    def n_dofs(self):
        return int(self.dof_node.size)

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def active_cells(self):
        return np.flatnonzero(self.cell_kind != CellKind.EXTERIOR)

    @property
    def cut_cells(self):
        return np.flatnonzero(self.cell_kind == CellKind.CUT)

    @property
    def interior_cells(self):
        return np.flatnonzero(self.cell_kind == CellKind.INTERIOR)

    def cell_index(self, cells):
        return np.stack(np.unravel_index(np.asarray(cells), self.cells), axis=-1)

    def cell_nodes(self, cells):
        """Global node ids of the cell vertices, shape ``(..., 2**dim)``."""
        idx = self.cell_index(cells)
        verts = idx[..., None, :] + local_vertex_offsets(self.dim)
        return np.ravel_multi_index(tuple(np.moveaxis(verts, -1, 0)), self.node_shape)

    def cell_dofs(self, cells):
        return self.node_dof[self.cell_nodes(cells)]

    def cell_lower(self, cells):
        return self.origin + self.cell_index(cells) * self.h

    def node_coords(self, nodes):
        idx = np.stack(np.unravel_index(np.asarray(nodes), self.node_shape), axis=-1)
        return self.origin + idx * self.h

    def dof_coords(self, dofs=None):
        nodes = self.dof_node if dofs is None else self.dof_node[dofs]
        return self.node_coords(nodes)

    def cell_phi(self, cells):
        return self.node_phi[self.cell_nodes(cells)]

    def fe_edges(self):
        """Unique FE edges of active cells as pairs of active DOF ids."""
        dim = self.dim
        offs = local_vertex_offsets(dim)
        pairs = [
            (a, b) for a in range(2**dim) for b in range(a + 1, 2**dim)
            if np.abs(offs[a] - offs[b]).sum() == 1
        ]
        dofs = self.cell_dofs(self.active_cells)
        edges = np.concatenate([dofs[:, list(p)] for p in pairs], axis=0)
        edges.sort(axis=1)
        return np.unique(edges, axis=0)


def classify_cells(lower, upper, cells, levelset, offset=None, tol=TOL_GEO):
    """Build the background mesh over ``[lower, upper] + offset``.

    Vertex values with ``|phi| < tol * h`` are snapped to ``+tol * h`` so
    that no active cell has a zero-measure intersection with the domain.

    Raises
    ------
    ValueError
        If no cell intersects the domain.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    cells = tuple(int(c) for c in cells)
    dim = len(cells)
    offset = np.zeros(dim) if offset is None else np.broadcast_to(np.asarray(offset, float), (dim,)).copy()
    h = (upper - lower) / np.array(cells)
    origin = lower + offset
    axes = [origin[a] + h[a] * np.arange(cells[a] + 1) for a in range(dim)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    phi = np.asarray(levelset.value(grid.reshape(-1, dim)), dtype=float)
    snap = tol * h.min()
    phi = np.where(np.abs(phi) < snap, snap, phi)

    neg = (phi < 0.0).reshape(tuple(c + 1 for c in cells))
    any_neg = np.zeros(cells, dtype=bool)
    all_neg = np.ones(cells, dtype=bool)
    for off in local_vertex_offsets(dim):
        sl = tuple(slice(o, o + c) for o, c in zip(off, cells))
        any_neg |= neg[sl]
        all_neg &= neg[sl]
    kind = np.full(cells, CellKind.EXTERIOR, dtype=np.int8)
    kind[any_neg] = CellKind.CUT
    kind[all_neg] = CellKind.INTERIOR
    if not any_neg.any():
        raise ValueError("empty active mesh: no cell intersects the domain")

    node_active = np.zeros(tuple(c + 1 for c in cells), dtype=bool)
    for off in local_vertex_offsets(dim):
        sl = tuple(slice(o, o + c) for o, c in zip(off, cells))
        node_active[sl] |= any_neg
    flat = node_active.ravel()
    dof_node = np.flatnonzero(flat)
    node_dof = np.full(flat.size, -1, dtype=np.int64)
    node_dof[dof_node] = np.arange(dof_node.size)
    return BackgroundMesh(
        origin=origin,
        h=h,
        cells=cells,
        node_phi=phi,
        cell_kind=kind.ravel(),
        node_dof=node_dof,
        dof_node=dof_node,
        offset=offset,
    )


def eta(mesh, cell, quadrature=None):
    """Active volume fraction ``|e cap Omega| / |e|`` of ``cell``."""
    kind = mesh.cell_kind[cell]
    if kind == CellKind.INTERIOR:
        return 1.0
    if kind == CellKind.EXTERIOR:
        return 0.0
    if quadrature is None:
        raise ValueError("cut cell needs its quadrature to evaluate eta")
    return float(quadrature.weights.sum() / mesh.cell_volume)


def write_classification_csv(path, mesh, quadratures=None):
    quadratures = quadratures or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "class", "eta"])
        for c in range(mesh.n_cells):
            kind = CellKind(mesh.cell_kind[c])
            value = eta(mesh, c, quadratures.get(c)) if kind != CellKind.CUT or c in quadratures else ""
            w.writerow([c, kind.name.lower(), value])
