import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unfitted_bddc.geometry import HalfSpace, Sphere, classify_cells
from unfitted_bddc.quadrature import (
    build_cut_quadrature,
    full_cell_quadrature,
    kuhn_simplices,
    simplex_rule,
)


def unit_cell(dim, levelset):
    return classify_cells(np.zeros(dim), np.ones(dim), (1,) * dim, levelset)


def test_vertical_cut_2d():
    mesh = unit_cell(2, HalfSpace([1.0, 0.0], 0.5))
    q = build_cut_quadrature(mesh, 0)
    assert q.volume == pytest.approx(0.5, abs=1e-12)
    assert q.area == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(q.surface_normals, np.tile([1.0, 0.0], (len(q.surface_weights), 1)))


def test_plane_cut_3d():
    mesh = unit_cell(3, HalfSpace([1.0, 0.0, 0.0], 0.25))
    q = build_cut_quadrature(mesh, 0)
    assert q.volume == pytest.approx(0.25, abs=1e-12)
    assert q.area == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(q.surface_normals[:, 0], 1.0, atol=1e-12)


def test_full_cell_rules():
    for dim, npts in ((2, 4), (3, 8)):
        mesh = unit_cell(dim, HalfSpace(np.eye(dim)[0], 5.0))
        q = full_cell_quadrature(mesh, 0, order=2)
        assert q.weights.size == npts
        assert q.volume == pytest.approx(1.0, abs=1e-14)
        assert not q.has_surface
    mesh = unit_cell(2, HalfSpace([1.0, 0.0], 5.0))
    q = full_cell_quadrature(mesh, 0, order=2)
    assert np.sum(q.weights * q.points[:, 0] ** 2) == pytest.approx(1.0 / 3.0, abs=1e-14)


@pytest.mark.parametrize("dim", [2, 3])
def test_simplex_rule_exactness(dim):
    pts, w = simplex_rule(dim, 2)
    # integral of x_0^3 over the unit simplex scaled by its measure
    exact = {2: 2.0 * 6.0 / 120.0, 3: 6.0 * 6.0 / 720.0}[dim]
    assert np.sum(w * pts[:, 0] ** 3) == pytest.approx(exact, rel=1e-13)


def test_kuhn_split_covers_cell():
    assert kuhn_simplices(2).shape == (2, 3)
    assert kuhn_simplices(3).shape == (6, 4)


def divergence_check(normal, offset, dim):
    """Divergence theorem for F(x) = x on a plane cut: d |e cap Omega| = flux."""
    ls = HalfSpace(normal, offset)
    mesh = unit_cell(dim, ls)
    q = build_cut_quadrature(mesh, 0, order=2)
    interface_flux = np.sum(q.surface_weights * np.sum(q.surface_points * q.surface_normals, -1))
    # cell faces x_a = 1 clipped to the negative side carry F.n = 1
    face_flux = 0.0
    for a in range(dim):
        try:
            sub = classify_cells(np.zeros(dim - 1), np.ones(dim - 1), (1,) * (dim - 1), _FaceLevelSet(ls, a))
        except ValueError:  # face entirely outside
            continue
        if sub.cut_cells.size:
            face_flux += build_cut_quadrature(sub, 0).volume
        elif sub.interior_cells.size:
            face_flux += 1.0
    return dim * q.volume, interface_flux + face_flux


class _FaceLevelSet:
    """Restriction of a level set to the face ``x_axis = 1``."""

    def __init__(self, ls, axis):
        self.ls, self.axis = ls, axis

    def value(self, y):
        y = np.atleast_2d(y)
        x = np.insert(y, self.axis, 1.0, axis=-1)
        return self.ls.value(x)


@settings(max_examples=30, deadline=None)
@given(
    angle=st.floats(0.1, 1.4),
    tilt=st.floats(0.1, 1.4),
    offset=st.floats(0.3, 1.1),
)
def test_divergence_theorem_plane_cuts(angle, tilt, offset):
    n = np.array([np.cos(angle) * np.sin(tilt), np.sin(angle) * np.sin(tilt), np.cos(tilt)])
    lhs, rhs = divergence_check(n, offset, 3)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_weights_positive_and_normals_unit():
    ls = Sphere(np.zeros(3), 0.7)
    mesh = classify_cells(-np.ones(3), np.ones(3), (8, 8, 8), ls)
    for c in mesh.cut_cells:
        q = build_cut_quadrature(mesh, c)
        assert np.all(q.weights > 0)
        np.testing.assert_allclose(np.linalg.norm(q.surface_normals, axis=1), 1.0, atol=1e-12)


def test_sphere_area_second_order():
    ls = Sphere(np.zeros(3), 0.7)
    exact = 4 * np.pi * 0.49
    err = []
    for n in (8, 16, 32):
        mesh = classify_cells(-np.ones(3), np.ones(3), (n,) * 3, ls)
        err.append(abs(sum(build_cut_quadrature(mesh, c).area for c in mesh.cut_cells) - exact))
    assert np.all(np.log2(np.array(err[:-1]) / err[1:]) > 1.8)


def test_order_must_be_positive():
    mesh = unit_cell(2, HalfSpace([1.0, 0.0], 0.5))
    with pytest.raises(ValueError):
        build_cut_quadrature(mesh, 0, order=0)
