"""Moving mesh PDE in the xi-formulation.

The computational coordinates xi follow the gradient flow of the discrete
meshing energy

    I_h = sum_K |K| G(J_K, det J_K),   J_K = E_{K_c} E_K^{-1},

while the physical mesh T_h^n stays fixed. After integrating over
[t_n, t_{n+1}] the new physical mesh is obtained by linear interpolation of
the correspondence T_c^{n+1} -> T_h^n at the reference vertices.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .errors import MeshTangled, NonpositiveVolume
from .mesh import check_nonsingular, edge_matrices, edge_matrices_of, locate_points

log = logging.getLogger(__name__)

__all__ = [
    "energy_density_G",
    "energy_gradients",
    "local_velocities",
    "assemble_mesh_velocities",
    "mesh_energy",
    "xformulation_velocities",
    "MeshMover",
    "move_mesh",
]


def _sqrt_det_inv(M):
    return np.sqrt(np.linalg.det(M)), np.linalg.inv(M)


def energy_density_G(J, detJ, M):
    """G = 1/3 det(M)^(1/2) tr(J M^-1 J^T)^2 + 4/3 det(M)^(-1/2) det(J)^2."""
    J = np.asarray(J, dtype=float)
    sd, Minv = _sqrt_det_inv(np.asarray(M, dtype=float))
    tr = np.einsum("...ij,...jk,...ik->...", J, Minv, J)
    return sd * tr ** 2 / 3.0 + 4.0 / 3.0 * np.asarray(detJ) ** 2 / sd


def energy_gradients(J, detJ, M):
    """Return (dG/dJ, dG/d det J); dG/dJ uses the transposed layout 4/3 sqrt(det M) tr(.) M^-1 J^T."""
    J = np.asarray(J, dtype=float)
    sd, Minv = _sqrt_det_inv(np.asarray(M, dtype=float))
    tr = np.einsum("...ij,...jk,...ik->...", J, Minv, J)
    dGdJ = (4.0 / 3.0) * (sd * tr)[..., None, None] * (Minv @ np.swapaxes(J, -1, -2))
    dGddet = (8.0 / 3.0) * np.asarray(detJ) / sd
    return dGdJ, dGddet


def local_velocities(E_K, E_Kc, M_K):
    """Local xi-velocities of the d+1 element vertices, shape (..., d+1, d).

    Rows 1..d are -E_K^{-1} dG/dJ - dG/ddetJ (det E_Kc / det E_K) E_Kc^{-1};
    row 0 is minus their sum.
    """
    E_K = np.asarray(E_K, dtype=float)
    E_Kc = np.asarray(E_Kc, dtype=float)
    det_K = np.linalg.det(E_K)
    if np.any(det_K <= 0):
        raise NonpositiveVolume(np.flatnonzero(np.atleast_1d(det_K) <= 0))
    EKinv = np.linalg.inv(E_K)
    J = E_Kc @ EKinv
    detJ = np.linalg.det(E_Kc) / det_K
    dGdJ, dGddet = energy_gradients(J, detJ, M_K)
    rows = -EKinv @ dGdJ - (dGddet * detJ)[..., None, None] * np.linalg.inv(E_Kc)
    v0 = -rows.sum(axis=-2, keepdims=True)
    return np.concatenate([v0, rows], axis=-2)


def _scatter(elements, local, n_vertices):
    """Sum per-element vertex vectors (N, d+1, d) into nodal vectors in a fixed order."""
    flat = elements.ravel()
    d = local.shape[-1]
    out = np.empty((n_vertices, d))
    for c in range(d):
        out[:, c] = np.bincount(flat, weights=local[..., c].ravel(), minlength=n_vertices)
    return out


def _project_boundary(topology, vel, boundary="sliding"):
    ni = topology.n_interior
    if boundary == "fixed":
        vel[ni:] = 0.0
        return vel
    if boundary != "sliding":
        raise ValueError(f"unknown boundary treatment {boundary!r}")
    t = topology.boundary_tangents
    vel[ni:] = np.sum(vel[ni:] * t, axis=1, keepdims=True) * t
    return vel


def assemble_mesh_velocities(mesh_h, xi, metric, tau, boundary=True):
    """Nodal xi-velocities sqrt(det M(x_i))/tau * sum_{K in patch} |K| v^K_{i_K}.

    ``boundary`` is True or ``"sliding"`` to project boundary velocities onto
    the boundary tangent (zero at 1D end points and polygon corners),
    ``"fixed"`` to zero them, or False to leave them untouched.
    """
    xi = np.asarray(xi, dtype=float).reshape(mesh_h.vertices.shape)
    E_K = edge_matrices(mesh_h)
    E_Kc = edge_matrices_of(xi[mesh_h.elements])
    vol = np.linalg.det(E_K) / (1.0 if mesh_h.dim == 1 else 2.0)
    v = local_velocities(E_K, E_Kc, metric.element)
    vel = _scatter(mesh_h.elements, v * vol[:, None, None], mesh_h.n_vertices)
    vel *= (metric.sqrt_det_vertex / tau)[:, None]
    if boundary:
        vel = _project_boundary(mesh_h.topology, vel, "sliding" if boundary is True else boundary)
    return vel


def mesh_energy(mesh_h, xi, metric):
    """Discrete energy I_h(T_h, T_c) for computational coordinates ``xi``."""
    xi = np.asarray(xi, dtype=float).reshape(mesh_h.vertices.shape)
    E_K = edge_matrices(mesh_h)
    E_Kc = edge_matrices_of(xi[mesh_h.elements])
    det_K = np.linalg.det(E_K)
    J = E_Kc @ np.linalg.inv(E_K)
    detJ = np.linalg.det(E_Kc) / det_K
    vol = det_K / (1.0 if mesh_h.dim == 1 else 2.0)
    return float(np.sum(vol * energy_density_G(J, detJ, metric.element)))


def xformulation_velocities(mesh_h, xi_ref, metric, tau, boundary=True):
    """Physical-coordinate velocities -sqrt(det M)/tau dI_h/dx with the metric frozen per element.

    Debugging aid only: the metric is not re-evaluated as vertices move.
    """
    xi_ref = np.asarray(xi_ref, dtype=float).reshape(mesh_h.vertices.shape)
    E_K = edge_matrices(mesh_h)
    E_Kc = edge_matrices_of(xi_ref[mesh_h.elements])
    det_K = np.linalg.det(E_K)
    EKinv = np.linalg.inv(E_K)
    J = E_Kc @ EKinv
    detJ = np.linalg.det(E_Kc) / det_K
    G = energy_density_G(J, detJ, metric.element)
    dGdJ, dGddet = energy_gradients(J, detJ, metric.element)
    d = mesh_h.dim
    inner = (G - dGddet * detJ)[:, None, None] * np.eye(d) - dGdJ @ J
    rows = (det_K / (1.0 if d == 1 else 2.0))[:, None, None] * (EKinv @ inner)
    grad = np.concatenate([-rows.sum(axis=1, keepdims=True), rows], axis=1)
    vel = -_scatter(mesh_h.elements, grad, mesh_h.n_vertices)
    vel *= (metric.sqrt_det_vertex / tau)[:, None]
    if boundary:
        vel = _project_boundary(mesh_h.topology, vel, "sliding" if boundary is True else boundary)
    return vel


def _jacobian_sparsity(topology):
    cache = topology.__dict__.setdefault("_mmpde_sparsity", {})
    if "pattern" not in cache:
        d, nv = topology.dim, topology.n_vertices
        el = topology.elements
        rows = np.repeat(el, el.shape[1], axis=1).ravel()
        cols = np.tile(el, (1, el.shape[1])).ravel()
        vv = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(nv, nv)).tocsr()
        vv.data[:] = 1.0
        cache["pattern"] = sp.kron(vv, np.ones((d, d)), format="csr")
    return cache["pattern"]


@dataclass
class MoveInfo:
    nfev: int = 0
    nsteps: int = 0
    energy_start: float = float("nan")
    energy_end: float = float("nan")
    truncated_at: float = float("nan")


class MeshMover:
    """Moves a physical mesh by one time interval of the xi-formulation MMPDE.

    ``reference`` is the fixed quasi-uniform computational mesh (by default
    the initial physical mesh). ``method`` is ``"bdf"`` (implicit, default) or
    ``"euler"`` (explicit Euler with displacement-capped substeps).
    ``boundary`` is ``"sliding"`` (boundary vertices move along their edge,
    corners stay put) or ``"fixed"`` (no boundary vertex moves).

    The meshing energy depends on det(J)^2 only, so nothing in the flow keeps
    computational elements from passing through zero volume when the metric
    varies sharply. Integration therefore stops early once some element of
    the computational mesh shrinks below ``min_volume_ratio`` times its
    reference volume; the move is then a partial relaxation.
    """

    def __init__(self, reference, tau, method="bdf", substep_safety=0.4, rtol=1e-6,
                 atol_factor=1e-3, max_substeps=200000, boundary="sliding", min_volume_ratio=1e-2):
        if boundary not in ("sliding", "fixed"):
            raise ValueError(f"unknown boundary treatment {boundary!r}")
        self.reference = reference
        self.boundary = boundary
        self.tau = float(tau)
        self.method = method
        self.substep_safety = substep_safety
        self.rtol = rtol
        xe = reference.vertices[reference.elements]
        self._hmin = float(np.min(np.linalg.norm(xe[:, 1:] - xe[:, :1], axis=2)))
        self.atol = atol_factor * self._hmin
        self.max_substeps = max_substeps
        self.min_volume_ratio = float(min_volume_ratio)
        self._ref_det = np.linalg.det(edge_matrices_of(xe))
        self._hosts = None
        self.last_info = MoveInfo()

    def velocity(self, mesh_h, metric, xi):
        return assemble_mesh_velocities(mesh_h, xi, metric, self.tau, boundary=self.boundary)

    def volume_margin(self, xi):
        """min_K |K_c(xi)| / |K_c(reference)| minus ``min_volume_ratio``."""
        xi = np.asarray(xi, dtype=float).reshape(self.reference.vertices.shape)
        det = np.linalg.det(edge_matrices_of(xi[self.reference.elements]))
        return float(np.min(det / self._ref_det)) - self.min_volume_ratio

    def integrate(self, mesh_h, metric, duration):
        """Integrate dxi/dt from the reference mesh over ``duration``; returns xi^{n+1}."""
        xi0 = self.reference.vertices.copy()
        info = MoveInfo()
        if self.method == "bdf":
            shape = xi0.shape

            def fun(t, y):
                info.nfev += 1
                return self.velocity(mesh_h, metric, y.reshape(shape)).ravel()

            def guard(t, y):
                return self.volume_margin(y)

            guard.terminal = True
            guard.direction = -1
            sol = solve_ivp(fun, (0.0, duration), xi0.ravel(), method="BDF", rtol=self.rtol,
                            atol=self.atol, jac_sparsity=_jacobian_sparsity(mesh_h.topology),
                            t_eval=[duration], events=guard)
            if not sol.success:
                raise MeshTangled(f"mesh equation integration failed: {sol.message}")
            if sol.status == 1:
                xi = sol.y_events[0][0].reshape(shape)
                info.truncated_at = float(sol.t_events[0][0])
            else:
                xi = sol.y[:, -1].reshape(shape)
            info.nsteps = int(sol.nfev)
        elif self.method == "euler":
            xi = xi0
            t = 0.0
            edge = self._incident_edge(mesh_h.topology)
            while t < duration:
                vel = self.velocity(mesh_h, metric, xi)
                info.nfev += 1
                speed = np.linalg.norm(vel, axis=1)
                cap = self.substep_safety * np.min(edge / np.maximum(speed, 1e-300))
                h = min(duration - t, cap)
                trial = xi + h * vel
                for _ in range(30):
                    if self.volume_margin(trial) >= 0:
                        break
                    h *= 0.5
                    trial = xi + h * vel
                else:
                    info.truncated_at = t
                    break
                xi = trial
                t += h
                info.nsteps += 1
                if info.nsteps > self.max_substeps:
                    raise MeshTangled("explicit mesh integration exceeded the substep budget")
        else:
            raise ValueError(f"unknown mesh integrator {self.method!r}")
        if info.truncated_at == info.truncated_at:
            log.debug("mesh move stopped at %.3g of %.3g to keep the computational mesh valid",
                      info.truncated_at, duration)
        self.last_info = info
        return xi

    def _incident_edge(self, topology):
        x = self.reference.vertices
        el = topology.elements
        d1 = el.shape[1]
        out = np.full(topology.n_vertices, np.inf)
        for i in range(d1):
            for j in range(d1):
                if i != j:
                    L = np.linalg.norm(x[el[:, i]] - x[el[:, j]], axis=1)
                    np.minimum.at(out, el[:, i], L)
        return out

    def interpolate(self, mesh_h, xi):
        """Phi_h(reference): locate reference vertices in T_c and interpolate physical coordinates."""
        comp = mesh_h.with_vertices(xi)
        rep = check_nonsingular(comp)
        if not rep.ok:
            raise MeshTangled(f"computational mesh became singular ({rep.n_inverted} inverted elements)")
        guess = self._hosts
        if guess is None:
            ptr, elems, _ = mesh_h.topology.patch_ptr_elems
            guess = elems[ptr[:-1]]
        hosts, lam = locate_points(comp, self.reference.vertices, guess=guess)
        self._hosts = hosts
        xh = mesh_h.vertices[mesh_h.elements[hosts]]
        x_new = np.einsum("pj,pjd->pd", lam, xh)
        new = mesh_h.with_vertices(x_new).snap_boundary(self.reference)
        rep = check_nonsingular(new)
        if not rep.ok:
            raise MeshTangled(f"interpolated physical mesh is singular ({rep.n_inverted} inverted elements)")
        return new

    def move(self, mesh_h, metric, duration):
        xi = self.integrate(mesh_h, metric, duration)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return self.interpolate(mesh_h, xi)


def move_mesh(mesh_n, metric, tau, t_n, t_n1, reference=None, method="bdf"):
    """Functional form: new physical mesh after integrating the MMPDE over [t_n, t_n1]."""
    mover = MeshMover(reference if reference is not None else mesh_n, tau, method=method)
    return mover.move(mesh_n, metric, t_n1 - t_n)
