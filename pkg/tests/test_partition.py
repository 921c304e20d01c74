import csv

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import uncut_square
from unfitted_bddc.experiments import ExperimentConfig, discretize
from unfitted_bddc.partition import (
    InterfaceObject,
    InterfaceObjects,
    ObjectKind,
    build_partition,
    check_face_boundaries,
    split_edges_v1,
    split_edges_v2,
)


def as_sets(objects):
    return sorted((o.kind, tuple(o.nodes)) for o in objects)


def test_uncut_square_objects():
    _, disc = uncut_square(16, 8)
    obj = disc.objects
    assert disc.subsystem.n_subdomains == 4
    assert obj.count(ObjectKind.EDGE) == 4
    assert obj.count(ObjectKind.CORNER) == 1
    corner = obj.of_kind(ObjectKind.CORNER)[0]
    assert corner.neigh == (0, 1, 2, 3)
    assert all(o.size == 7 for o in obj.of_kind(ObjectKind.EDGE))


def test_uncut_cube_objects():
    cfg = ExperimentConfig(geometry="box", ratio=4, geometry_params={"dim": 3})
    obj = discretize(cfg, 8).objects
    assert obj.count(ObjectKind.CORNER) == 1
    assert obj.count(ObjectKind.EDGE) == 6
    assert obj.count(ObjectKind.FACE) == 12
    assert check_face_boundaries(obj, discretize(cfg, 8).edges) == 0


def test_objects_partition_interface(sphere_id1):
    obj = sphere_id1.objects
    assert obj.check_partition()
    np.testing.assert_array_equal(
        np.sort(np.concatenate([o.nodes for o in obj])), sphere_id1.subsystem.interface
    )
    for o in obj:
        assert len(o.neigh) >= 2


def test_sphere_partition_sizes(sphere_id1):
    part = sphere_id1.partition
    assert part.n_subdomains == 8
    assert part.block_capacity == 512
    assert part.cells_per_subdomain.max() == 133
    assert part.cells_per_subdomain.sum() == sphere_id1.mesh.active_cells.size


def test_non_divisible_ratio():
    _, disc = uncut_square(16, 8)
    with pytest.raises(ValueError, match="divisible"):
        build_partition(disc.mesh, 5)


def test_single_subdomain_has_no_interface():
    _, disc = uncut_square(16, 16)
    assert disc.subsystem.n_subdomains == 1
    assert len(disc.objects) == 0
    assert disc.subsystem.interface.size == 0


def chain(n=8):
    obj = InterfaceObjects([InterfaceObject(ObjectKind.EDGE, np.arange(n), (0, 1))], 2, n, np.arange(n))
    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return obj, edges


def test_v1_chain():
    obj, edges = chain()
    phi = np.array([-1, -1, -1, 1, 1, 1, 1, 1.0])
    out = split_edges_v1(obj, phi, edges)
    assert as_sets(out) == sorted([
        (ObjectKind.EDGE, (0, 1)),
        (ObjectKind.CORNER, (2,)),
        (ObjectKind.CORNER, (3,)),
        (ObjectKind.EDGE, (4, 5, 6, 7)),
    ])
    assert out.check_partition()
    assert as_sets(split_edges_v1(out, phi, edges)) == as_sets(out)


def test_v1_uncut_edge_untouched():
    obj, edges = chain()
    out = split_edges_v1(obj, -np.ones(8), edges)
    assert len(out) == 1 and out[0].provenance == "standard"


def test_v2_chain():
    obj, edges = chain()
    w = np.array([[0.5, 0.5]] * 3 + [[0.9, 0.1]] + [[0.5, 0.5 * (1 + 1e-10)]] * 4)
    out = split_edges_v2(obj, sp.csr_matrix(w), edges)
    assert as_sets(out) == sorted([
        (ObjectKind.EDGE, (0, 1, 2)),
        (ObjectKind.CORNER, (3,)),
        (ObjectKind.EDGE, (4, 5, 6, 7)),
    ])


def brute_force_v2(obj, W, edges, tol=1e-8):
    """Transitive closure of 'adjacent and equal tuples' by dense matrix powers."""
    groups = []
    adj = set(map(tuple, edges.tolist()))
    for o in obj:
        if o.kind != ObjectKind.EDGE:
            groups.append(tuple(o.nodes))
            continue
        t = W[o.nodes][:, list(o.neigh)].toarray()
        m = o.size
        R = np.eye(m, dtype=bool)
        for i in range(m):
            for j in range(m):
                a, b = int(o.nodes[i]), int(o.nodes[j])
                if ((a, b) in adj or (b, a) in adj) and np.allclose(t[i], t[j], rtol=tol, atol=0):
                    R[i, j] = True
        for _ in range(int(np.ceil(np.log2(m))) + 1):
            R = R | ((R.astype(int) @ R.astype(int)) > 0)
        groups.extend({tuple(o.nodes[R[i]]) for i in range(m)})
    return sorted(groups)


def test_v2_matches_brute_force(sphere_id1):
    W = sphere_id1.weighting("stiffness").matrix
    out = split_edges_v2(sphere_id1.objects, W, sphere_id1.edges)
    assert out.check_partition()
    assert sorted(tuple(o.nodes) for o in out) == brute_force_v2(sphere_id1.objects, W, sphere_id1.edges)
    again = split_edges_v2(out, W, sphere_id1.edges)
    assert as_sets(again) == as_sets(out)


def test_split_variants_refine(sphere_id1):
    std = sphere_id1.objects
    owner = std.owner()
    for variant in ("v1", "v2"):
        out = sphere_id1.split_objects(variant, "stiffness")
        assert out.check_partition()
        assert len(out) >= len(std)
        for o in out:
            # every piece lies inside one standard object with the same neighbours
            assert np.unique(owner[o.nodes]).size == 1
            assert std[owner[o.nodes[0]]].neigh == o.neigh


def test_objects_csv(tmp_path, sphere_id1):
    path = tmp_path / "objects.csv"
    sphere_id1.objects.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["object", "kind", "provenance", "neigh", "nodes"]
    assert len(rows) == len(sphere_id1.objects) + 1
    assert {r[1] for r in rows[1:]} <= {"corner", "edge", "face"}
