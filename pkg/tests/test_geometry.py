import numpy as np
import pytest

from unfitted_bddc.geometry import (
    GEOMETRIES,
    CellKind,
    Constant,
    HalfSpace,
    Sphere,
    classify_cells,
    eta,
    make_geometry,
    write_classification_csv,
)
from unfitted_bddc.quadrature import build_cut_quadrature


def test_all_interior():
    mesh = classify_cells([0, 0], [1, 1], (5, 5), Constant(-1.0))
    assert np.all(mesh.cell_kind == CellKind.INTERIOR)
    assert mesh.n_dofs == 36


def test_empty_active_mesh():
    with pytest.raises(ValueError, match="empty"):
        classify_cells([0, 0], [1, 1], (4, 4), Constant(1.0))


def test_sphere_table_counts():
    geo = make_geometry("sphere")
    mesh = classify_cells(geo.lower, geo.upper, (16, 16, 16), geo.levelset)
    assert mesh.active_cells.size == 1064
    assert mesh.n_dofs == 1461


def test_dof_numbering_is_lexicographic():
    geo = make_geometry("disk")
    mesh = classify_cells(geo.lower, geo.upper, (16, 16), geo.levelset)
    assert np.all(np.diff(mesh.dof_node) > 0)
    # every node of an active cell has a DOF, and nothing else does
    touched = np.unique(mesh.cell_nodes(mesh.active_cells))
    np.testing.assert_array_equal(touched, mesh.dof_node)


def test_eta_values():
    mesh = classify_cells([0, 0], [1, 1], (1, 1), HalfSpace([1.0, 0.0], 0.5))
    assert eta(mesh, 0, build_cut_quadrature(mesh, 0)) == pytest.approx(0.5, abs=1e-12)
    mesh3 = classify_cells([0, 0, 0], [1, 1, 1], (1, 1, 1), HalfSpace([1.0, 0, 0], 0.25))
    assert eta(mesh3, 0, build_cut_quadrature(mesh3, 0)) == pytest.approx(0.25, abs=1e-12)
    full = classify_cells([0, 0], [1, 1], (2, 2), Constant(-1.0))
    assert eta(full, 3) == 1.0


def test_sphere_volume_second_order():
    ls = Sphere(np.zeros(3), 0.7)
    exact = 4.0 / 3.0 * np.pi * 0.7**3
    errors = []
    for n in (8, 16, 32):
        mesh = classify_cells(-np.ones(3), np.ones(3), (n,) * 3, ls)
        vol = mesh.interior_cells.size * mesh.cell_volume
        vol += sum(build_cut_quadrature(mesh, c).volume for c in mesh.cut_cells)
        errors.append(abs(vol - exact))
    rates = np.log2(np.array(errors[:-1]) / errors[1:])
    assert np.all(rates > 1.8)


def test_translation_consistency():
    ls = Sphere(np.zeros(3), 0.7)
    shift = np.array([0.013, -0.02, 0.007])
    a = classify_cells(-np.ones(3), np.ones(3), (8, 8, 8), ls, offset=shift)
    b = classify_cells(-np.ones(3), np.ones(3), (8, 8, 8), ls.translated(-shift))
    np.testing.assert_array_equal(a.cell_kind, b.cell_kind)


def test_snapping_avoids_zero_measure_cells():
    # level set vanishing exactly on grid lines
    mesh = classify_cells([0, 0], [1, 1], (4, 4), HalfSpace([1.0, 0.0], 0.5))
    assert mesh.active_cells.size == 8
    # cells right of the line would only touch the domain on a face
    assert np.all(mesh.cell_lower(mesh.active_cells)[:, 0] < 0.5)
    for c in mesh.cut_cells:
        assert eta(mesh, c, build_cut_quadrature(mesh, c)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("name", sorted(GEOMETRIES))
def test_catalog_shapes_have_active_cells(name):
    geo = make_geometry(name)
    mesh = classify_cells(geo.lower, geo.upper, geo.base_cells, geo.levelset)
    assert mesh.active_cells.size > 0
    x = mesh.dof_coords()[:5]
    g = geo.levelset.gradient(x)
    assert g.shape == x.shape


def test_gradient_matches_finite_differences(rng):
    ls = make_geometry("popcorn").levelset
    x = rng.uniform(-0.8, 0.8, size=(10, 3))
    step = 1e-6
    fd = np.stack(
        [(ls.value(x + step * e) - ls.value(x - step * e)) / (2 * step) for e in np.eye(3)], axis=-1
    )
    np.testing.assert_allclose(ls.gradient(x), fd, atol=1e-5)


def test_classification_csv(tmp_path):
    geo = make_geometry("disk")
    mesh = classify_cells(geo.lower, geo.upper, (8, 8), geo.levelset)
    quads = {int(c): build_cut_quadrature(mesh, c) for c in mesh.cut_cells}
    path = tmp_path / "cells.csv"
    write_classification_csv(path, mesh, quads)
    lines = path.read_text().splitlines()
    assert lines[0] == "cell,class,eta"
    assert len(lines) == 65
