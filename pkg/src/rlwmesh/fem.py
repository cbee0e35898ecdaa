"""Linear finite elements for the (v, u) formulation of the RLW equation.

With v = u - mu Laplace(u) the equation becomes

    v_t + a . grad u + u^p (c . grad u) = 0,     v = u - mu Laplace(u),

which on a moving mesh is discretized as the index-1 DAE

    M dv/dt + f(u, v) = 0
    [M_II M_IB](v - u) - [A_II A_IB] u = 0
    u_B = g_B

where f also carries the moving-mesh term -grad(v_h) . Xdot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, LinearSolveFailure, NoExactSolution, NonpositiveVolume
from .mesh import edge_matrices

__all__ = [
    "SolutionState",
    "FEMSpace",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_convection",
    "recover_u",
    "forward_map",
    "initial_state",
    "fixed_mesh_rhs",
    "conserved_quantities",
    "error_at",
    "ErrorAccumulator",
    "RLWSystem",
    "dae_residual",
]

# Gauss rules in barycentric coordinates; weights sum to one
_S = np.sqrt(3.0 / 5.0)
_QUAD_1D = (np.array([[0.5 * (1 + _S), 0.5 * (1 - _S)], [0.5, 0.5], [0.5 * (1 - _S), 0.5 * (1 + _S)]]),
            np.array([5.0, 8.0, 5.0]) / 18.0)
_QUAD_2D = (np.array([[1 / 3, 1 / 3, 1 / 3], [0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]]),
            np.array([-27.0, 25.0, 25.0, 25.0]) / 48.0)


def _gauss_1d(n):
    s, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (s + 1.0)
    return np.column_stack([1.0 - t, t]), 0.5 * w


def _radon7():
    a1 = (6.0 - np.sqrt(15.0)) / 21.0
    a2 = (6.0 + np.sqrt(15.0)) / 21.0
    w1 = (155.0 - np.sqrt(15.0)) / 1200.0
    w2 = (155.0 + np.sqrt(15.0)) / 1200.0
    pts = [[1 / 3, 1 / 3, 1 / 3]]
    wts = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [[a, a, b], [a, b, a], [b, a, a]]
        wts += [w, w, w]
    return np.array(pts), np.array(wts)


# higher order rules for error norms (u is not polynomial there)
_ERR_QUAD = {1: _gauss_1d(5), 2: _radon7()}


@dataclass
class SolutionState:
    t: float
    u: np.ndarray
    v: np.ndarray

    def copy(self):
        return SolutionState(self.t, self.u.copy(), self.v.copy())


class FEMSpace:
    """P1 assembly on a fixed connectivity; coordinates are passed per call."""

    def __init__(self, topology):
        self.topology = topology
        self.dim = topology.dim
        el = topology.elements
        n, d1 = el.shape
        nv = topology.n_vertices
        rows = np.repeat(el, d1, axis=1).ravel()
        cols = np.tile(el, (1, d1)).ravel()
        keys = rows * nv + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        self._map = inv
        self._indices = (uniq % nv).astype(np.int32)
        self._indptr = np.searchsorted(uniq // nv, np.arange(nv + 1)).astype(np.int32)
        self._nnz = uniq.size
        self.quad = _QUAD_1D if self.dim == 1 else _QUAD_2D
        ref = np.vstack([-np.ones((1, self.dim)), np.eye(self.dim)])
        self._ref_grad = ref
        d = self.dim
        self._mass_ref = (np.ones((d1, d1)) + np.eye(d1)) / ((d + 1) * (d + 2))

    # -- geometry -----------------------------------------------------------
    def geometry(self, vertices, check=True):
        """Element volumes (N,) and basis gradients (N, d+1, d)."""
        xe = vertices[self.topology.elements]
        E = np.swapaxes(xe[:, 1:, :] - xe[:, :1, :], 1, 2)
        det = np.linalg.det(E)
        if check and np.any(det <= 0):
            raise NonpositiveVolume(np.flatnonzero(det <= 0))
        vol = det / (1.0 if self.dim == 1 else 2.0)
        grads = self._ref_grad @ np.linalg.inv(E)
        return vol, grads

    def matrix(self, local):
        data = np.bincount(self._map, weights=local.ravel(), minlength=self._nnz)
        nv = self.topology.n_vertices
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(nv, nv))

    def scatter(self, local):
        return np.bincount(self.topology.elements.ravel(), weights=local.ravel(),
                           minlength=self.topology.n_vertices)

    # -- matrices -----------------------------------------------------------
    def mass(self, geom):
        vol, _ = geom
        return self.matrix(vol[:, None, None] * self._mass_ref)

    def stiffness(self, geom, mu):
        vol, grads = geom
        return self.matrix((mu * vol)[:, None, None] * np.einsum("kid,kjd->kij", grads, grads))

    def lumped(self, geom):
        vol, _ = geom
        return self.scatter(np.repeat(vol[:, None] / (self.dim + 1), self.dim + 1, axis=1))

    # -- convection ---------------------------------------------------------
    def _fields(self, geom, u, v, xdot):
        vol, grads = geom
        el = self.topology.elements
        lam, w = self.quad
        ue = u[el]
        uq = ue @ lam.T
        gu = np.einsum("kj,kjd->kd", ue, grads)
        gv = np.einsum("kj,kjd->kd", v[el], grads)
        xq = None if xdot is None else np.einsum("qj,kjd->kqd", lam, xdot[el])
        return vol, grads, lam, w, uq, gu, gv, xq

    def convection(self, geom, u, v, xdot, a, c, p):
        """Load vector f_i = int (a.grad u + u^p c.grad u - grad v . Xdot) phi_i."""
        vol, grads, lam, w, uq, gu, gv, xq = self._fields(geom, u, v, xdot)
        integrand = (gu @ a)[:, None] + uq ** p * (gu @ c)[:, None]
        if xq is not None:
            integrand = integrand - np.einsum("kqd,kd->kq", xq, gv)
        local = vol[:, None] * np.einsum("kq,q,qi->ki", integrand, w, lam)
        return self.scatter(local)

    def convection_jacobians(self, geom, u, v, xdot, a, c, p):
        """Sparse (df/du, df/dv)."""
        vol, grads, lam, w, uq, gu, gv, xq = self._fields(geom, u, v, xdot)
        d1 = self.dim + 1
        a_dot = grads @ a                      # (N, d+1)
        c_dot = grads @ c
        cgu = gu @ c
        # int (a.grad phi_j) phi_i = |K|/(d+1) a.grad phi_j
        ju = (vol / d1)[:, None, None] * np.broadcast_to(a_dot[:, None, :], (len(vol), d1, d1))
        wq = w[None, :] * p * uq ** (p - 1) * cgu[:, None]
        ju = ju + vol[:, None, None] * np.einsum("kq,qi,qj->kij", wq, lam, lam)
        wq2 = w[None, :] * uq ** p
        ju = ju + vol[:, None, None] * np.einsum("kq,qi,kj->kij", wq2, lam, c_dot)
        Ju = self.matrix(ju)
        if xq is None:
            Jv = sp.csr_matrix((self.topology.n_vertices,) * 2)
        else:
            jv = -vol[:, None, None] * np.einsum("q,qi,kqd,kjd->kij", w, lam, xq, grads)
            Jv = self.matrix(jv)
        return Ju, Jv


def _space(mesh):
    cache = mesh.topology.__dict__
    if "_fem_space" not in cache:
        cache["_fem_space"] = FEMSpace(mesh.topology)
    return cache["_fem_space"]


def assemble_mass(mesh):
    S = _space(mesh)
    return S.mass(S.geometry(mesh.vertices))


def assemble_stiffness(mesh, mu):
    S = _space(mesh)
    return S.stiffness(S.geometry(mesh.vertices), mu)


def assemble_convection(mesh, state, mesh_velocity, problem):
    """Vector f for nodal u, v and the piecewise linear mesh velocity (None for a fixed mesh)."""
    S = _space(mesh)
    return S.convection(S.geometry(mesh.vertices), np.asarray(state.u, float), np.asarray(state.v, float),
                        mesh_velocity, problem.convection, problem.nonlinear, problem.p)


def _solve(A, b):
    try:
        x = spla.spsolve(A.tocsc(), b)
    except RuntimeError as exc:  # singular factor
        raise LinearSolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("linear solve produced non-finite values")
    return x


def recover_u(M, A, v, g_B, n_interior):
    """u_I = (M_II + A_II)^{-1} (M_II v_I + M_IB v_B - (M_IB + A_IB) g_B)."""
    M = sp.csr_matrix(M)
    A = sp.csr_matrix(A)
    ni = n_interior
    MI = M[:ni]
    AI = A[:ni]
    rhs = MI @ v - (MI[:, ni:] + AI[:, ni:]) @ np.asarray(g_B, float)
    return _solve((MI[:, :ni] + AI[:, :ni]), rhs)


def forward_map(M, A, u):
    """Nodal v with M v = (M + A) u in every row (the weak form of v = u - mu Laplace u)."""
    M = sp.csr_matrix(M)
    return _solve(M, (M + A) @ u)


def initial_state(mesh, problem, t=0.0):
    x = mesh.vertices
    ni = mesh.n_interior
    u = problem.initial_values(x)
    if problem.g is not None:
        u = u.copy()
        u[ni:] = problem.boundary_values(x[ni:], t)
    S = _space(mesh)
    geom = S.geometry(x)
    M = S.mass(geom)
    A = S.stiffness(geom, problem.mu)
    v = forward_map(M, A, u)
    return SolutionState(t, u, v)


def fixed_mesh_rhs(mesh, state, problem, dg_dt=None):
    """du_I/dt from (M_II + A_II) du_I/dt = -f_I - (M_IB + A_IB) dg_B/dt on a static mesh."""
    S = _space(mesh)
    geom = S.geometry(mesh.vertices)
    M = S.mass(geom)
    A = S.stiffness(geom, problem.mu)
    f = S.convection(geom, state.u, state.v, None, problem.convection, problem.nonlinear, problem.p)
    ni = mesh.n_interior
    rhs = -f[:ni]
    if dg_dt is not None:
        rhs = rhs - (M[:ni, ni:] + A[:ni, ni:]) @ dg_dt
    return _solve((M + A)[:ni, :ni], rhs)


def conserved_quantities(mesh, u, mu):
    """E1 = int u and E2 = int (u^2 + mu |grad u|^2) of the piecewise linear u_h."""
    S = _space(mesh)
    geom = S.geometry(mesh.vertices)
    vol, _ = geom
    u = np.asarray(u, float)
    E1 = float(np.sum(vol * u[mesh.elements].mean(axis=1)))
    E2 = float(u @ (S.mass(geom) @ u) + u @ (S.stiffness(geom, mu) @ u))
    return E1, E2


def error_at(mesh, u, exact, t):
    """(||u_h - u||_L2, ||u_h - u||_Linf) with Linf over quadrature points and vertices."""
    if exact is None:
        raise NoExactSolution("error norms need an exact solution")
    lam, w = _ERR_QUAD[mesh.dim]
    x = mesh.vertices
    el = mesh.elements
    vol = np.linalg.det(edge_matrices(mesh)) / (1.0 if mesh.dim == 1 else 2.0)
    xq = np.einsum("qj,kjd->kqd", lam, x[el])
    uh = np.asarray(u, float)[el] @ lam.T
    ex = exact(xq.reshape(-1, mesh.dim), t).reshape(uh.shape)
    e = uh - ex
    l2 = float(np.sqrt(np.sum(vol * (e ** 2 @ w))))
    linf = max(float(np.abs(e).max()), float(np.abs(u - exact(x, t)).max()))
    return l2, linf


class ErrorAccumulator:
    """Composite trapezoid integration of the error norms over accepted steps."""

    def __init__(self, exact):
        if exact is None:
            raise NoExactSolution("error norms need an exact solution")
        self.exact = exact
        self.t = None
        self.last = None
        self.L2 = 0.0
        self.Linf = 0.0
        self.history = []

    def add(self, mesh, u, t):
        e = error_at(mesh, u, self.exact, t)
        if self.t is not None:
            dt = t - self.t
            self.L2 += 0.5 * dt * (self.last[0] + e[0])
            self.Linf += 0.5 * dt * (self.last[1] + e[1])
        self.t, self.last = t, e
        self.history.append((t, *e))
        return e


class RLWSystem:
    """The semi-discrete DAE in the form B(t) y' = F(t, y), y = (v, u).

    ``set_interval`` fixes the mesh motion used for t in [t_n, t_{n+1}].
    """

    def __init__(self, problem, topology):
        self.problem = problem
        self.space = FEMSpace(topology) if "_fem_space" not in topology.__dict__ else topology.__dict__["_fem_space"]
        topology.__dict__["_fem_space"] = self.space
        self.topology = topology
        self.nv = topology.n_vertices
        self.ni = topology.n_interior
        self.n = 2 * self.nv
        self.diff_mask = np.concatenate([np.ones(self.nv, bool), np.zeros(self.nv, bool)])
        self.interval = None
        self._cache = {}
        self.nfev = 0
        self.njev = 0

    def set_interval(self, interval):
        self.interval = interval
        self._cache = {}

    def _at(self, t):
        hit = self._cache.get(t)
        if hit is None:
            x = self.interval.vertices_at(t)
            geom = self.space.geometry(x)
            M = self.space.mass(geom)
            A = self.space.stiffness(geom, self.problem.mu)
            gB = self.problem.boundary_values(x[self.ni:], t)
            hit = (geom, M, A, gB)
            if len(self._cache) > 16:
                self._cache.clear()
            self._cache[t] = hit
        return hit

    def _xdot(self):
        return None if self.interval.is_static else self.interval.velocity

    def split(self, y):
        return y[: self.nv], y[self.nv:]

    def mass(self, t):
        _, M, _, _ = self._at(t)
        Z = sp.csr_matrix((self.nv, self.nv))
        return sp.bmat([[M, None], [None, Z]], format="csr")

    def fun(self, t, y):
        self.nfev += 1
        geom, M, A, gB = self._at(t)
        v, u = self.split(y)
        p = self.problem
        f = self.space.convection(geom, u, v, self._xdot(), p.convection, p.nonlinear, p.p)
        ni = self.ni
        alg = np.empty(self.nv)
        alg[:ni] = M[:ni] @ (v - u) - A[:ni] @ u
        alg[ni:] = gB - u[ni:]
        return np.concatenate([-f, alg])

    def jac(self, t, y):
        self.njev += 1
        geom, M, A, _ = self._at(t)
        v, u = self.split(y)
        p = self.problem
        Ju, Jv = self.space.convection_jacobians(geom, u, v, self._xdot(), p.convection, p.nonlinear, p.p)
        ni, nb = self.ni, self.nv - self.ni
        MI, AI = M[:ni], A[:ni]
        alg_v = sp.vstack([MI, sp.csr_matrix((nb, self.nv))])
        alg_u = sp.vstack([-(MI + AI), sp.hstack([sp.csr_matrix((nb, ni)), -sp.identity(nb)])])
        return sp.bmat([[-Jv, -Ju], [alg_v, alg_u]], format="csc")

    def constraint_residual(self, t, y):
        """Blocks (ii) and (iii) of the DAE residual at (t, y)."""
        return self.fun(t, y)[self.nv:]


def dae_residual(interval, state, dstate_dt, problem):
    """Residual of the DAE: (M dv/dt + f, M_I(v - u) - A_I u, u_B - g_B) at state.t."""
    system = RLWSystem(problem, interval.mesh_start.topology)
    system.set_interval(interval)
    nv = system.nv
    u, v = np.asarray(state.u, float), np.asarray(state.v, float)
    dv = np.asarray(getattr(dstate_dt, "v", dstate_dt), float)
    if u.shape != (nv,) or v.shape != (nv,) or dv.shape != (nv,):
        raise DimensionMismatch(f"expected nodal vectors of length {nv}")
    y = np.concatenate([v, u])
    _, M, _, _ = system._at(state.t)
    F = system.fun(state.t, y)
    r1 = M @ dv - F[:nv]
    alg = -F[nv:]
    alg[: system.ni] *= -1.0
    return np.concatenate([r1, alg])
