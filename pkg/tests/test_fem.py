import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import spsolve

from rlwmesh.errors import DimensionMismatch, NoExactSolution
from rlwmesh.fem import (ErrorAccumulator, RLWSystem, SolutionState, _space, assemble_convection,
                         assemble_mass, assemble_stiffness, conserved_quantities, dae_residual, error_at,
                         fixed_mesh_rhs, forward_map, initial_state, recover_u)
from rlwmesh.mesh import MovingMeshInterval, interval_mesh, mesh_from_arrays, rectangle_mesh
from rlwmesh.problems import catalog, sech2
from rlwmesh.radau import StepController, integrate_interval


def jittered_square(n, seed):
    m = rectangle_mesh(0, 1, 0, 1, n, n)
    rng = np.random.default_rng(seed)
    x = m.vertices.copy()
    x[: m.n_interior] += 0.25 / n * (rng.random((m.n_interior, 2)) - 0.5)
    return m.with_vertices(x)


def central_vertex(mesh):
    return int(np.argmin(np.abs(mesh.vertices[:, 0] - mesh.vertices[:, 0].mean())))


def test_mass_1d_uniform():
    m = interval_mesh(0, 1, 8)
    M = assemble_mass(m).toarray()
    h = 1 / 8
    i = central_vertex(m)
    row = M[i]
    assert np.isclose(row[i], 2 * h / 3)
    assert np.allclose(np.sort(row[row > 0])[:2], [h / 6, h / 6])


def test_mass_single_triangle():
    m = mesh_from_arrays(np.array([[0.0, 0.0], [3.0, 0.0], [1.0, 2.0]]), [[0, 1, 2]])
    M = assemble_mass(m).toarray()
    assert np.allclose(M, 3.0 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]))


def test_stiffness_1d_uniform():
    m = interval_mesh(0, 1, 8)
    mu = 0.7
    A = assemble_stiffness(m, mu).toarray()
    h = 1 / 8
    i = central_vertex(m)
    assert np.isclose(A[i, i], 2 * mu / h)
    assert np.allclose(np.sort(A[i][A[i] < 0]), [-mu / h, -mu / h])


def test_stiffness_reference_triangle():
    m = mesh_from_arrays(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [[0, 1, 2]])
    A = assemble_stiffness(m, 1.0).toarray()
    assert np.allclose(A, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])


@pytest.mark.parametrize("seed", range(4))
def test_partition_of_unity_and_spd(seed):
    m = jittered_square(4, seed)
    M = assemble_mass(m)
    A = assemble_stiffness(m, 1.3)
    assert np.isclose(M.sum(), 1.0, rtol=1e-12)
    assert np.abs(np.asarray(A.sum(axis=1))).max() < 1e-12
    ni = m.n_interior
    for B in (M, A):
        B = B.toarray()
        assert np.allclose(B, B.T)
        assert np.linalg.eigvalsh(B[:ni, :ni]).min() > 0


def test_convection_zero_for_constant_state():
    p = catalog("two_wave2d")
    m = jittered_square(3, 1)
    n = m.n_vertices
    assert np.all(assemble_convection(m, SolutionState(0, np.zeros(n), np.zeros(n)), None, p) == 0)
    f = assemble_convection(m, SolutionState(0, np.full(n, 0.4), np.full(n, 0.4)), None, p)
    assert np.abs(f).max() < 1e-14
    # a constant v also kills the mesh-velocity term
    xdot = np.random.default_rng(0).normal(size=(n, 2))
    f = assemble_convection(m, SolutionState(0, np.full(n, 0.4), np.full(n, 0.4)), xdot, p)
    assert np.abs(f).max() < 1e-14


def test_convection_linear_field_gives_basis_integrals():
    m = interval_mesh(0, 1, 6)
    S = _space(m)
    geom = S.geometry(m.vertices)
    x = m.vertices[:, 0]
    f = S.convection(geom, x, x, None, np.array([1.0]), np.array([0.0]), 1)
    h = 1 / 6
    want = np.where(np.isclose(x, 0) | np.isclose(x, 1), h / 2, h)
    assert np.allclose(f, want)


@pytest.mark.parametrize("p", [1, 2])
def test_convection_nonlinear_term_exact(p):
    # u = x on (0,1): int u^p u' phi_i is a polynomial integral per element
    m = interval_mesh(0, 1, 3)
    S = _space(m)
    geom = S.geometry(m.vertices)
    x = m.vertices[:, 0]
    f = S.convection(geom, x, x, None, np.array([0.0]), np.array([1.0]), p)
    from numpy.polynomial.legendre import leggauss
    g, w = leggauss(8)
    want = np.zeros_like(x)
    for i, xi in enumerate(x):
        for a, b in ((0, 1 / 3), (1 / 3, 2 / 3), (2 / 3, 1)):
            s = 0.5 * (b - a) * g + 0.5 * (a + b)
            phi = np.clip(1 - np.abs(s - xi) * 3, 0, None)
            want[i] += 0.5 * (b - a) * np.sum(w * s ** p * phi)
    assert np.allclose(f, want, atol=1e-14)


@pytest.mark.parametrize("dim,p", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_convection_jacobians_match_finite_differences(dim, p):
    rng = np.random.default_rng(3)
    m = interval_mesh(0, 1, 5) if dim == 1 else jittered_square(2, 3)
    S = _space(m)
    geom = S.geometry(m.vertices)
    n = m.n_vertices
    u, v = rng.normal(size=n), rng.normal(size=n)
    xdot = rng.normal(size=(n, dim))
    a, c = rng.normal(size=dim), rng.normal(size=dim)
    Ju, Jv = S.convection_jacobians(geom, u, v, xdot, a, c, p)
    eps = 1e-6
    for J, which in ((Ju.toarray(), 0), (Jv.toarray(), 1)):
        fd = np.zeros((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = eps
            args_p = (u + e, v) if which == 0 else (u, v + e)
            args_m = (u - e, v) if which == 0 else (u, v - e)
            fd[:, j] = (S.convection(geom, *args_p, xdot, a, c, p) - S.convection(geom, *args_m, xdot, a, c, p)) / (2 * eps)
        assert np.allclose(J, fd, atol=1e-7 * max(1, np.abs(fd).max()))


def test_system_jacobian_matches_finite_differences():
    p = catalog("soliton1d")
    m0 = interval_mesh(*p.domain, 8)
    x1 = m0.vertices.copy()
    x1[: m0.n_interior, 0] += 3.0
    sys_ = RLWSystem(p, m0.topology)
    sys_.set_interval(MovingMeshInterval(m0, m0.with_vertices(x1), 0.0, 1.0))
    rng = np.random.default_rng(0)
    y = rng.normal(size=sys_.n)
    J = sys_.jac(0.3, y).toarray()
    eps = 1e-6
    fd = np.column_stack([(sys_.fun(0.3, y + eps * e) - sys_.fun(0.3, y - eps * e)) / (2 * eps)
                          for e in np.eye(sys_.n)])
    assert np.allclose(J, fd, atol=1e-7 * np.abs(fd).max())


def test_recover_u_round_trip():
    p = catalog("two_wave2d")
    m = jittered_square(5, 2)
    x = m.vertices * 120
    m = m.with_vertices(x)
    M, A = assemble_mass(m), assemble_stiffness(m, p.mu)
    u = p.initial_values(x)
    v = forward_map(M, A, u)
    uI = recover_u(M, A, v, u[m.n_interior:], m.n_interior)
    assert np.abs(uI - u[: m.n_interior]).max() < 1e-10


def test_recover_u_zero():
    m = interval_mesh(0, 1, 5)
    M, A = assemble_mass(m), assemble_stiffness(m, 1.0)
    assert np.all(recover_u(M, A, np.zeros(6), np.zeros(2), m.n_interior) == 0)


def test_recover_u_three_vertices_by_hand():
    h, mu = 0.5, 0.8
    m = interval_mesh(0, 2 * h, 2)
    M, A = assemble_mass(m), assemble_stiffness(m, mu)
    v = np.array([0.3, -0.2, 0.5])      # interior vertex first
    g = np.array([0.1, 0.4])
    num = 2 * h / 3 * v[0] + h / 6 * (v[1] + v[2]) - (h / 6 - mu / h) * (g[0] + g[1])
    want = num / (2 * h / 3 + 2 * mu / h)
    assert np.isclose(recover_u(M, A, v, g, 1)[0], want, rtol=1e-14)


def test_fixed_mesh_rhs_zero_forcing():
    p = catalog("soliton1d")
    m = interval_mesh(*p.domain, 20)
    n = m.n_vertices
    assert np.all(fixed_mesh_rhs(m, SolutionState(0, np.zeros(n), np.zeros(n)), p) == 0)


def test_fourier_mode_dispersion():
    """Linear waves: assembled rows give omega = a sin(th) / (h(2+cos th)/3 + 2 mu (1 - cos th)/h)."""
    L, n, mu, a = 10.0, 200, 0.6, 1.3
    m = interval_mesh(0, L, n)
    h = L / n
    S = _space(m)
    geom = S.geometry(m.vertices)
    M, A = S.mass(geom), S.stiffness(geom, mu)
    x = m.vertices[:, 0]
    i = central_vertex(m)
    for kappa in (0.3, 2.0, 9.0):
        mode = np.exp(1j * kappa * x)
        conv = (S.convection(geom, mode.real, mode.real, None, np.array([a]), np.array([0.0]), 1)
                + 1j * S.convection(geom, mode.imag, mode.imag, None, np.array([a]), np.array([0.0]), 1))
        lhs = ((M + A) @ mode)[i]
        omega = conv[i] / lhs / 1j
        th = kappa * h
        want = a * np.sin(th) / (h * (2 + np.cos(th)) / 3 + 2 * mu * (1 - np.cos(th)) / h)
        assert abs(omega - want) < 1e-10 * max(1, abs(want))


def test_conserved_quantities_examples():
    m = rectangle_mesh(0, 2, 0, 3, 3, 4)
    E1, E2 = conserved_quantities(m, np.ones(m.n_vertices), 1.0)
    assert np.isclose(E1, 6.0) and np.isclose(E2, 6.0)
    h, mu = 0.25, 0.7
    m = interval_mesh(0, 1, 4)
    u = np.zeros(m.n_vertices)
    u[central_vertex(m)] = 1.0
    E1, E2 = conserved_quantities(m, u, mu)
    assert np.isclose(E1, h) and np.isclose(E2, 2 * h / 3 + 2 * mu / h)


def test_soliton_mass_converges_to_continuum():
    c, k = 0.1, 0.3
    errs = []
    for n in (50, 100, 200):
        m = interval_mesh(-100, 150, n)
        u = 1.5 * c * sech2(k * (m.vertices[:, 0] - 40))
        errs.append(abs(conserved_quantities(m, u, 1.0)[0] - 3 * c / k))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3 * 3 * c / k


def test_error_norms_examples():
    m = interval_mesh(0, 1, 7)
    exact = lambda x, t: np.ones(len(x))
    acc = ErrorAccumulator(exact)
    for t in np.linspace(0, 1, 5):
        acc.add(m, np.zeros(m.n_vertices), t)
    assert np.isclose(acc.L2, 1.0) and np.isclose(acc.Linf, 1.0)
    p = catalog("soliton1d")
    m = interval_mesh(*p.domain, 40)
    uh = p.exact(m.vertices, 0.0)
    order = np.argsort(m.vertices[:, 0])
    interpolant = lambda x, t: np.interp(x[:, 0], m.vertices[order, 0], uh[order])
    assert error_at(m, uh, interpolant, 0.0) == pytest.approx((0.0, 0.0), abs=1e-13)
    with pytest.raises(NoExactSolution):
        ErrorAccumulator(None)


def test_dae_residual_examples():
    p = catalog("maxwellian_mrlw1d")
    m = interval_mesh(*p.domain, 12)
    iv = MovingMeshInterval(m, m, 0.0, 1.0)
    n = m.n_vertices
    z = np.zeros(n)
    assert np.all(dae_residual(iv, SolutionState(0.0, z, z), z, p) == 0)
    st0 = initial_state(m, p)
    r = dae_residual(iv, st0, np.zeros(n), p)
    assert np.abs(r[n:]).max() < 1e-12          # constraints hold after the forward map
    # stationary constant state with no convection
    q = p.with_params(alpha=0.0, gamma=1e-300, g=lambda x, t: 0.5)  # gamma u^2 u_x vanishes anyway
    const = SolutionState(0.0, np.full(n, 0.5), np.full(n, 0.5))
    assert np.abs(dae_residual(iv, const, np.zeros(n), q)).max() < 1e-14
    with pytest.raises(DimensionMismatch):
        dae_residual(iv, SolutionState(0.0, z[:-1], z), z, p)


def test_dae_derivative_matches_reduced_flow():
    # dv/dt = -M^{-1} f zeroes block (i); differentiating block (ii) must then
    # reproduce the reduced ODE derivative on the interior rows
    p = catalog("maxwellian_mrlw1d")
    m = interval_mesh(*p.domain, 30)
    iv = MovingMeshInterval(m, m, 0.0, 1.0)
    st0 = initial_state(m, p)
    M, A = assemble_mass(m), assemble_stiffness(m, p.mu)
    f = assemble_convection(m, st0, None, p)
    dv = spsolve(M.tocsc(), -f)
    r = dae_residual(iv, st0, dv, p)
    assert np.abs(r).max() < 1e-12 * np.abs(f).max()
    ni = m.n_interior
    du = np.zeros(m.n_vertices)
    du[:ni] = fixed_mesh_rhs(m, st0, p)
    lhs = (M[:ni] @ dv)
    rhs = (M + A)[:ni] @ du
    assert np.abs(lhs - rhs).max() < 1e-12 * np.abs(lhs).max()


def test_dae_and_reduced_ode_paths_agree():
    """Fixed mesh, 10 elements: Radau on the DAE vs a tight reference solve of the reduced ODE."""
    p = catalog("soliton1d")
    m = interval_mesh(*p.domain, 10)
    ni, T = m.n_interior, 5.0
    st0 = initial_state(m, p)

    def rhs(t, uI):
        u = np.concatenate([uI, st0.u[ni:]])
        return fixed_mesh_rhs(m, SolutionState(t, u, u), p)

    ref = solve_ivp(rhs, (0, T), st0.u[:ni], method="DOP853", rtol=1e-13, atol=1e-15).y[:, -1]

    system = RLWSystem(p, m.topology)
    ctrl = StepController(dt=0.1, rtol=1e-10, atol=1e-12)
    y, t = np.concatenate([st0.v, st0.u]), 0.0
    while t < T - 1e-12:
        iv = MovingMeshInterval(m, m, t, min(t + ctrl.dt, T))
        y, iv, _ = integrate_interval(system, iv, y, ctrl)
        t = iv.t_end
    u_dae = system.split(y)[1][:ni]
    assert np.abs(u_dae - ref).max() < 1e-8 * np.abs(ref).max()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_mass_quadratic_form_is_l2_norm(seed):
    rng = np.random.default_rng(seed)
    m = jittered_square(3, seed)
    a, b, c = rng.normal(size=3)
    u = a + b * m.vertices[:, 0] + c * m.vertices[:, 1]
    M = assemble_mass(m)
    # exact int (a + b x + c y)^2 over the unit square
    want = a * a + a * b + a * c + b * b / 3 + c * c / 3 + b * c / 2
    assert np.isclose(u @ (M @ u), want, rtol=1e-10)
