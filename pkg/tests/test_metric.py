import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlwmesh.errors import FlatField
from rlwmesh.mesh import element_volumes, interval_mesh, mesh_from_arrays, rectangle_mesh
from rlwmesh.metric import (absolute_hessian, build_metric, element_average, metric_tensor,
                            recover_hessian, solve_alpha)
from rlwmesh.problems import sech2


def jittered_square(n, seed, amp=0.25):
    m = rectangle_mesh(0, 1, 0, 1, n, n)
    rng = np.random.default_rng(seed)
    x = m.vertices.copy()
    h = 1.0 / n
    x[: m.n_interior] += amp * h * (rng.random((m.n_interior, 2)) - 0.5)
    return m.with_vertices(x)


def test_quadratic_1d_exact():
    m = interval_mesh(-1, 2, 7)
    x = m.vertices[:, 0]
    rng = np.random.default_rng(1)
    x = np.sort(np.concatenate([[-1, 2], rng.uniform(-1, 2, 6)]))
    m = mesh_from_arrays(x[:, None], np.column_stack([np.arange(7), np.arange(1, 8)]))
    H = recover_hessian(m, m.vertices[:, 0] ** 2)
    assert np.allclose(H[:, 0, 0], 2.0, atol=1e-9)


def test_xy_2d():
    m = jittered_square(4, 0)
    x, y = m.vertices.T
    H = recover_hessian(m, x * y)
    assert np.allclose(H, [[0, 1], [1, 0]], atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_any_quadratic_reproduced(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=6)
    m = jittered_square(3, seed)
    x, y = m.vertices.T
    u = c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    H = recover_hessian(m, u)
    want = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    assert np.allclose(H, want, atol=1e-9)


def test_sech2_hessian_converges():
    k = 0.4
    errs = []
    for n in (40, 80, 160):
        m = interval_mesh(-10, 10, n)
        u = sech2(k * m.vertices[:, 0])
        H = recover_hessian(m, u)
        i = int(np.argmin(np.abs(m.vertices[:, 0])))
        errs.append(abs(H[i, 0, 0] + 2 * k * k))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_absolute_hessian_examples():
    assert np.allclose(absolute_hessian(np.diag([-3.0, 2.0])), np.diag([3.0, 2.0]))
    assert np.allclose(absolute_hessian(np.zeros((2, 2))), 0)
    assert np.allclose(absolute_hessian(np.array([[0.0, 1.0], [1.0, 0.0]])), np.eye(2))


def test_alpha_constant_curvature_1d():
    m = interval_mesh(0, 1, 10)
    c = 0.7
    Habs = np.full((m.n_vertices, 1, 1), c)
    alpha = solve_alpha(m, Habs)
    assert np.isclose(alpha, (2 ** 2.5 - 1) * c, rtol=1e-9)


def test_alpha_flat_raises():
    m = interval_mesh(0, 1, 10)
    with pytest.raises(FlatField):
        solve_alpha(m, np.zeros((m.n_vertices, 1, 1)))


def _alpha_sides(m, Habs, alpha):
    e = 2.0 / (m.dim + 4)
    vol = element_volumes(m)
    HK = element_average(m, Habs)
    lhs = np.sum(vol * np.linalg.det(alpha * np.eye(m.dim) + HK) ** e)
    rhs = np.sum(vol * np.clip(np.linalg.det(HK), 0, None) ** e)
    return lhs, rhs


def test_alpha_defining_equation_and_scaling():
    m = jittered_square(5, 3)
    x, y = m.vertices.T
    u = np.exp(-((x - 0.4) ** 2 + 2 * (y - 0.6) ** 2) * 8)
    Habs = absolute_hessian(recover_hessian(m, u))
    a1 = solve_alpha(m, Habs)
    lhs, rhs = _alpha_sides(m, Habs, a1)
    assert np.isclose(lhs, 2 * rhs, rtol=1e-9)
    assert _alpha_sides(m, Habs, 0.0)[0] == pytest.approx(rhs)
    a2 = solve_alpha(m, 2 * Habs)
    lhs2, rhs2 = _alpha_sides(m, 2 * Habs, a2)
    assert np.isclose(lhs2 / rhs2, 2.0, rtol=1e-9)
    assert np.isclose(a2, 2 * a1, rtol=1e-8)


def test_metric_formula_examples():
    assert np.isclose(metric_tensor(np.array([[[30.0]]]), 2.0)[0, 0, 0], 16.0)
    M = metric_tensor(np.diag([3.0, 0.0])[None], 1.0)[0]
    assert np.allclose(M, 4 ** (-1 / 6) * np.diag([4.0, 1.0]))
    assert np.isclose(np.linalg.det(M), 4 ** (2 / 3))


def test_flat_field_gives_identity():
    m = rectangle_mesh(0, 1, 0, 1, 3, 3)
    met = build_metric(m, np.full(m.n_vertices, 0.3))
    assert met.flat
    assert np.allclose(met.vertex, np.eye(2))
    met = build_metric(m, m.vertices[:, 0] * 2 - 1)  # linear: zero Hessian too
    assert met.flat


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_metric_is_spd(seed):
    rng = np.random.default_rng(seed)
    m = jittered_square(4, seed)
    u = rng.normal(size=m.n_vertices)
    met = build_metric(m, u)
    assert np.all(np.linalg.eigvalsh(met.vertex) > 0)
    assert np.allclose(met.element, met.vertex[m.elements].mean(axis=1))
