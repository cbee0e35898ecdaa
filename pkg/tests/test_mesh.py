import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlwmesh.errors import MeshTangled, NonpositiveVolume
from rlwmesh.mesh import (MovingMeshInterval, check_nonsingular, edge_matrix, element_patch,
                          element_volume, element_volumes, interval_mesh, locate_points,
                          mesh_from_arrays, rectangle_mesh)


def triangle(*pts):
    return mesh_from_arrays(np.array(pts, float), [[0, 1, 2]])


def test_edge_matrix_1d():
    m = mesh_from_arrays(np.array([[0.0], [0.5]]), [[0, 1]])
    assert np.allclose(edge_matrix(m, 0), [[0.5]])


def test_edge_matrix_reference_triangle_is_identity():
    m = triangle((0, 0), (1, 0), (0, 1))
    assert np.allclose(edge_matrix(m, 0), np.eye(2))


def test_edge_matrix_general_triangle():
    m = triangle((0, 0), (2, 0), (1, 3))
    E = edge_matrix(m, 0)
    assert np.allclose(E, [[2, 1], [0, 3]])
    assert np.isclose(np.linalg.det(E), 6.0)


def test_element_volumes():
    assert np.isclose(element_volume(triangle((0, 0), (2, 0), (0, 2)), 0), 2.0)
    assert np.isclose(element_volume(mesh_from_arrays(np.array([[0.0], [0.5]]), [[0, 1]]), 0), 0.5)


def test_collinear_triangle_rejected():
    m = triangle((0, 0), (1, 0), (2, 0))
    with pytest.raises(NonpositiveVolume):
        element_volume(m, 0)


def test_orientation_fixed_at_construction():
    m = triangle((0, 0), (0, 1), (1, 0))  # clockwise input
    assert element_volume(m, 0) > 0


def test_patches():
    m = interval_mesh(0.0, 1.0, 4)
    mid = int(np.argmin(np.abs(m.vertices[:, 0] - 0.5)))
    assert len(element_patch(m, mid)) == 2
    sq = rectangle_mesh(0, 1, 0, 1, 1, 1, pattern="diagonal")
    corners = [i for i in range(sq.n_vertices) if len(element_patch(sq, i)) == 1]
    assert len(corners) == 2
    d = rectangle_mesh(0, 1, 0, 1, 4, 4, pattern="diagonal")
    inner = [i for i in range(d.n_interior)]
    assert all(len(element_patch(d, i)) == 6 for i in inner)


def test_nonsingular_report():
    rep = check_nonsingular(interval_mesh(0, 1, 10))
    assert rep.ok and np.isclose(rep.min_volume, 0.1)
    rep = check_nonsingular(triangle((0, 0), (1, 0), (0, 1)))
    assert np.isclose(rep.min_height, 1 / math.sqrt(2))
    m = interval_mesh(0, 1, 4)
    x = m.vertices.copy()
    x[0, 0] = x[1, 0] + 0.3  # push an interior vertex past its neighbour
    assert not check_nonsingular(m.with_vertices(x)).ok


def test_interior_vertices_first():
    m = rectangle_mesh(0, 2, 0, 1, 3, 2)
    x = m.vertices
    on_b = (np.isclose(x[:, 0], 0) | np.isclose(x[:, 0], 2) | np.isclose(x[:, 1], 0) | np.isclose(x[:, 1], 1))
    assert not on_b[: m.n_interior].any()
    assert on_b[m.n_interior:].all()


@pytest.mark.parametrize("pattern,per", [("cross", 4), ("diagonal", 2)])
def test_rectangle_counts_and_area(pattern, per):
    m = rectangle_mesh(-1, 2, 0, 3, 5, 4, pattern=pattern)
    assert m.n_elements == per * 20
    assert np.isclose(element_volumes(m).sum(), 9.0, rtol=1e-12)


def test_every_element_in_d_plus_one_patches():
    m = rectangle_mesh(0, 1, 0, 1, 3, 3)
    counts = np.zeros(m.n_elements, int)
    for i in range(m.n_vertices):
        counts[element_patch(m, i)] += 1
    assert np.all(counts == 3)


def test_boundary_tangents():
    m = rectangle_mesh(0, 1, 0, 1, 3, 3)
    t = m.topology.boundary_tangents
    x = m.vertices[m.n_interior:]
    corner = (np.isclose(x[:, 0], 0) | np.isclose(x[:, 0], 1)) & (np.isclose(x[:, 1], 0) | np.isclose(x[:, 1], 1))
    assert np.allclose(t[corner], 0)
    bottom = np.isclose(x[:, 1], 0) & ~corner
    assert np.allclose(np.abs(t[bottom]), [1, 0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_locate_points_recovers_barycentric(seed):
    rng = np.random.default_rng(seed)
    m = rectangle_mesh(0, 1, 0, 1, 4, 3)
    pts = rng.random((30, 2))
    hosts, lam = locate_points(m, pts)
    assert np.all(lam >= -1e-10)
    back = np.einsum("pj,pjd->pd", lam, m.vertices[m.elements[hosts]])
    assert np.allclose(back, pts, atol=1e-12)


def test_locate_points_1d():
    m = interval_mesh(0, 1, 5)
    hosts, lam = locate_points(m, np.array([[0.05], [0.5], [1.0]]))
    back = np.einsum("pj,pj->p", lam, m.vertices[m.elements[hosts], 0])
    assert np.allclose(back, [0.05, 0.5, 1.0])


def test_moving_interval_linear_motion_and_truncate():
    m0 = interval_mesh(0, 1, 4)
    x1 = m0.vertices.copy()
    x1[: m0.n_interior] += 0.05
    m1 = m0.with_vertices(x1)
    iv = MovingMeshInterval(m0, m1, 1.0, 2.0)
    assert np.allclose(iv.vertices_at(1.5), 0.5 * (m0.vertices + x1))
    assert np.allclose(iv.velocity[: m0.n_interior], 0.05)
    short = iv.truncate(1.25)
    assert np.allclose(short.mesh_end.vertices, m0.vertices + 0.25 * iv.velocity)
    assert np.allclose(short.velocity, iv.velocity)
    assert iv.check() > 0


def test_moving_interval_detects_intermediate_inversion():
    m0 = rectangle_mesh(0, 1, 0, 1, 2, 2)
    x1 = m0.vertices.copy()
    # drag the centre vertex through the domain and back near its start: the
    # endpoints stay valid only if the motion is checked in between
    i = 0
    x1[i] = x1[i] + np.array([0.9, 0.9])
    iv = MovingMeshInterval(m0, m0.with_vertices(x1), 0.0, 1.0)
    with pytest.raises(MeshTangled):
        iv.check()
