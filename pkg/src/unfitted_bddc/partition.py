"""Subdomain aggregation and interface objects (corners, edges, faces).

Objects are connected groups of interface DOFs sharing the same set of
neighbouring subdomains. Two optional passes split coarse edges further:
``split_edges_v1`` isolates FE edges crossed by the boundary, while
``split_edges_v2`` groups edge nodes with equal weighting coefficients.
"""

import csv
import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .geometry import CellKind

__all__ = [
    "ObjectKind",
    "SubdomainPartition",
    "InterfaceObject",
    "InterfaceObjects",
    "build_partition",
    "free_edges",
    "classify_objects",
    "split_edges_v1",
    "split_edges_v2",
]

logger = logging.getLogger(__name__)

V2_REL_TOL = 1e-8


class ObjectKind(enum.IntEnum):
    CORNER = 0
    EDGE = 1
    FACE = 2


@dataclass
class SubdomainPartition:
    """Block-uniform aggregation of active cells.

    ``cell_subdomain`` maps every background cell to its subdomain index
    (``-1`` for exterior cells). Only blocks with active cells become
    subdomains; ``block_ids`` holds their block numbers.
    """

    blocks: tuple
    ratio: tuple
    H: np.ndarray
    cell_subdomain: np.ndarray
    block_ids: np.ndarray

    @property
    def n_subdomains(self):
        return int(self.block_ids.size)

    def cells_of(self, s):
        return np.flatnonzero(self.cell_subdomain == s)

    @property
    def cells_per_subdomain(self):
        owned = self.cell_subdomain[self.cell_subdomain >= 0]
        return np.bincount(owned, minlength=self.n_subdomains)

    @property
    def block_capacity(self):
        """Background cells per block, ``prod(H/h)``, an upper bound on active cells."""
        return int(np.prod(self.ratio))


def build_partition(mesh, ratio):
    """Aggregate cells into blocks of ``ratio`` cells per axis (``H/h``).

    Raises
    ------
    ValueError
        If the number of cells along an axis is not a multiple of ``ratio``.
    """
    ratio = tuple(int(r) for r in np.broadcast_to(ratio, (mesh.dim,)))
    for n, r in zip(mesh.cells, ratio):
        if r <= 0 or n % r:
            raise ValueError(f"{n} cells per axis is not divisible by H/h = {r}")
    blocks = tuple(n // r for n, r in zip(mesh.cells, ratio))
    idx = mesh.cell_index(np.arange(mesh.n_cells))
    block = np.ravel_multi_index(tuple((idx // np.array(ratio)).T), blocks)
    active = mesh.cell_kind != CellKind.EXTERIOR
    block_ids = np.unique(block[active])
    lookup = np.full(int(np.prod(blocks)), -1)
    lookup[block_ids] = np.arange(block_ids.size)
    cell_subdomain = np.where(active, lookup[block], -1)
    return SubdomainPartition(
        blocks=blocks,
        ratio=ratio,
        H=mesh.h * np.array(ratio),
        cell_subdomain=cell_subdomain,
        block_ids=block_ids,
    )


@dataclass
class InterfaceObject:
    kind: ObjectKind
    nodes: np.ndarray
    neigh: tuple
    provenance: str = "standard"

    @property
    def size(self):
        return int(self.nodes.size)


@dataclass
class InterfaceObjects:
    objects: list
    dim: int
    n_dofs: int
    interface: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects)

    def __getitem__(self, i):
        return self.objects[i]

    def count(self, kind):
        return sum(1 for o in self.objects if o.kind == kind)

    def of_kind(self, *kinds):
        return [o for o in self.objects if o.kind in kinds]

    def owner(self):
        """Object index of every DOF (``-1`` off the interface)."""
        out = np.full(self.n_dofs, -1)
        for i, o in enumerate(self.objects):
            out[o.nodes] = i
        return out

    def check_partition(self):
        """True if objects are disjoint and cover exactly the interface."""
        seen = np.zeros(self.n_dofs, dtype=int)
        for o in self.objects:
            np.add.at(seen, o.nodes, 1)
        on = np.zeros(self.n_dofs, dtype=bool)
        on[self.interface] = True
        return bool(np.all(seen[on] == 1) and np.all(seen[~on] == 0))

    def to_csv(self, path, dof_ids=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["object", "kind", "provenance", "neigh", "nodes"])
            for i, o in enumerate(self.objects):
                nodes = o.nodes if dof_ids is None else dof_ids[o.nodes]
                w.writerow([
                    i, o.kind.name.lower(), o.provenance,
                    " ".join(map(str, o.neigh)), " ".join(map(str, nodes)),
                ])


def free_edges(system):
    """FE edges of active cells between free DOFs, in free numbering."""
    e = system.free_index[system.mesh.fe_edges()]
    return e[(e >= 0).all(axis=1)]


def _components(nodes, edges, n):
    """Connected components of ``nodes`` under ``edges`` (pairs of ids < n)."""
    if nodes.size == 0:
        return []
    local = np.full(n, -1)
    local[nodes] = np.arange(nodes.size)
    le = local[edges] if edges.size else np.zeros((0, 2), dtype=int)
    le = le[(le >= 0).all(axis=1)]
    g = sp.coo_matrix((np.ones(len(le)), (le[:, 0], le[:, 1])), shape=(nodes.size,) * 2)
    _, labels = connected_components(g, directed=False)
    groups = defaultdict(list)
    for i, lab in enumerate(labels):
        groups[lab].append(nodes[i])
    return sorted((np.array(sorted(v)) for v in groups.values()), key=lambda a: a[0])


def _kind(dim, n_neigh, size):
    if dim == 3:
        if n_neigh == 2:
            return ObjectKind.FACE
        return ObjectKind.EDGE if size > 1 else ObjectKind.CORNER
    if n_neigh == 2 and size > 1:
        return ObjectKind.EDGE
    return ObjectKind.CORNER


def classify_objects(subsystem, edges, dim):
    """Group interface DOFs into corners, edges and faces.

    ``edges`` are FE edges in free-DOF numbering (see :func:`free_edges`).
    """
    inc = subsystem.incidence.tocsr()
    mult = np.diff(inc.indptr)
    interface = np.flatnonzero(mult > 1)
    keys = {}
    label = np.full(subsystem.n, -1)
    for d in interface:
        key = tuple(np.sort(inc.indices[inc.indptr[d]:inc.indptr[d + 1]]))
        label[d] = keys.setdefault(key, len(keys))
    same = edges[(label[edges[:, 0]] >= 0) & (label[edges[:, 0]] == label[edges[:, 1]])]
    g = sp.coo_matrix(
        (np.ones(len(same)), (same[:, 0], same[:, 1])), shape=(subsystem.n, subsystem.n)
    )
    _, comp = connected_components(g, directed=False)
    by_comp = defaultdict(list)
    for d in interface:
        by_comp[comp[d]].append(d)
    inv_keys = {v: k for k, v in keys.items()}
    objects = []
    for nodes in by_comp.values():
        nodes = np.array(sorted(nodes))
        neigh = inv_keys[label[nodes[0]]]
        objects.append(InterfaceObject(_kind(dim, len(neigh), nodes.size), nodes, neigh))
    objects.sort(key=lambda o: o.nodes[0])
    return InterfaceObjects(objects, dim, subsystem.n, interface)


def _replace_edges(objects, splitter):
    out = []
    for o in objects.objects:
        if o.kind != ObjectKind.EDGE:
            out.append(o)
            continue
        out.extend(splitter(o))
    out.sort(key=lambda o: o.nodes[0])
    return InterfaceObjects(out, objects.dim, objects.n_dofs, objects.interface)


def _inner_edges(nodes, edges, n):
    mask = np.zeros(n, dtype=bool)
    mask[nodes] = True
    return edges[mask[edges[:, 0]] & mask[edges[:, 1]]]


def split_edges_v1(objects, node_phi, edges):
    """Isolate FE edges crossed by the boundary on every coarse edge.

    Both DOFs of a cut FE edge become corners; the remaining FE edges are
    aggregated into connected subedges. ``node_phi`` is the level set at
    every free DOF.
    """
    n = objects.n_dofs
    negative = np.asarray(node_phi) < 0.0

    def split(o):
        inner = _inner_edges(o.nodes, edges, n)
        crossed = negative[inner[:, 0]] != negative[inner[:, 1]]
        if not crossed.any():
            return [o]
        corners = np.unique(inner[crossed])
        rest = np.setdiff1d(o.nodes, corners)
        pieces = [InterfaceObject(ObjectKind.CORNER, np.array([c]), o.neigh, "split-v1") for c in corners]
        for comp in _components(rest, inner[~crossed], n):
            kind = ObjectKind.EDGE if comp.size > 1 else ObjectKind.CORNER
            pieces.append(InterfaceObject(kind, comp, o.neigh, "split-v1"))
        return pieces

    return _replace_edges(objects, split)


def weights_agree(a, b, rel_tol=V2_REL_TOL):
    scale = np.maximum(np.abs(a), np.abs(b))
    return np.all(np.abs(a - b) <= rel_tol * scale, axis=-1)


def split_edges_v2(objects, weights, edges, rel_tol=V2_REL_TOL):
    """Split coarse edges where the weighting coefficients change.

    Neighbouring edge nodes whose weight tuples (one entry per subdomain of
    the edge, ordered by subdomain id) agree within ``rel_tol`` are
    aggregated; components of one node become corners.

    ``weights`` is a sparse ``(n_dofs, n_subdomains)`` matrix of coefficients.
    """
    n = objects.n_dofs
    W = sp.csr_matrix(weights)

    def split(o):
        inner = _inner_edges(o.nodes, edges, n)
        cols = list(o.neigh)
        local = np.full(n, -1)
        local[o.nodes] = np.arange(o.nodes.size)
        tuples = W[o.nodes][:, cols].toarray()
        a, b = tuples[local[inner[:, 0]]], tuples[local[inner[:, 1]]]
        linked = inner[weights_agree(a, b, rel_tol)]
        comps = _components(o.nodes, linked, n)
        if len(comps) == 1:
            return [o]
        pieces = []
        for comp in comps:
            kind = ObjectKind.EDGE if comp.size > 1 else ObjectKind.CORNER
            pieces.append(InterfaceObject(kind, comp, o.neigh, "split-v2"))
        return pieces

    return _replace_edges(objects, split)


def check_face_boundaries(objects, edges):
    """Log a warning for faces that touch no corner or edge object."""
    if objects.dim != 3:
        return 0
    owner = objects.owner()
    kinds = np.array([o.kind for o in objects.objects])
    bad = 0
    for i, o in enumerate(objects.objects):
        if o.kind != ObjectKind.FACE:
            continue
        touching = _touching(o.nodes, edges, objects.n_dofs)
        nb = owner[touching]
        nb = nb[(nb >= 0) & (nb != i)]
        if not np.any(kinds[nb] != ObjectKind.FACE):
            bad += 1
    if bad:
        logger.warning("%d faces have no edge or corner on their boundary", bad)
    return bad


def _touching(nodes, edges, n):
    mask = np.zeros(n, dtype=bool)
    mask[nodes] = True
    hit = mask[edges[:, 0]] ^ mask[edges[:, 1]]
    return np.unique(edges[hit].ravel())
