"""Hessian recovery and the regularized Hessian-based metric tensor."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import FlatField, SingularFit
from .mesh import element_volumes

__all__ = [
    "MetricField",
    "recover_hessian",
    "absolute_hessian",
    "solve_alpha",
    "build_metric",
    "metric_tensor",
    "uniform_metric",
]

_RANK_TOL = 1e-10


def _ring(topology, vertex, depth):
    nbrs = topology.vertex_neighbors
    seen = {vertex}
    frontier = {vertex}
    for _ in range(depth):
        nxt = set()
        for v in frontier:
            nxt.update(int(w) for w in nbrs[v])
        frontier = nxt - seen
        seen |= nxt
    return np.array(sorted(seen), dtype=np.int64)


def _n_coeffs(dim):
    return 3 if dim == 1 else 6


def _design(z):
    """Quadratic design matrices for local coordinates ``z`` of shape (G, ns, d)."""
    one = np.ones(z.shape[:2])
    if z.shape[2] == 1:
        x = z[..., 0]
        return np.stack([one, x, x * x], axis=-1)
    x, y = z[..., 0], z[..., 1]
    return np.stack([one, x, y, x * x, x * y, y * y], axis=-1)


def _sample_sets(topology):
    cache = topology.__dict__.setdefault("_hessian_samples", {})
    if "sets" not in cache:
        need = _n_coeffs(topology.dim)
        sets = []
        for i in range(topology.n_vertices):
            depth = 1
            s = _ring(topology, i, depth)
            while len(s) < need and depth < 4:
                depth += 1
                s = _ring(topology, i, depth)
            sets.append((depth, s))
        cache["sets"] = sets
    return cache["sets"]


def _fit(vertices, ids, samples):
    """Least-squares quadratic fits; returns (second-derivative coefficient rows, rank-ok mask, scale)."""
    z = vertices[samples] - vertices[ids][:, None, :]
    h = np.sqrt((z ** 2).sum(axis=2).max(axis=1))
    z = z / h[:, None, None]
    V = _design(z)
    sv = np.linalg.svd(V, compute_uv=False)
    ok = sv[:, -1] > _RANK_TOL * sv[:, 0]
    P = np.linalg.pinv(V)
    return P, ok, h


def recover_hessian(mesh, values):
    """Per-vertex Hessian from least-squares quadratic fits over vertex neighbourhoods.

    The neighbourhood is the vertex plus its edge neighbours; it grows by
    rings until there are at least as many samples as quadratic
    coefficients and the fit has full rank.
    """
    values = np.asarray(values, dtype=float)
    topo = mesh.topology
    if values.shape != (mesh.n_vertices,):
        raise ValueError("one nodal value per vertex required")
    d = mesh.dim
    x = mesh.vertices
    H = np.empty((mesh.n_vertices, d, d))
    sets = _sample_sets(topo)
    groups = {}
    for i, (_, s) in enumerate(sets):
        groups.setdefault(len(s), []).append(i)
    retry = []
    for ns, ids in groups.items():
        ids = np.array(ids)
        samples = np.array([sets[i][1] for i in ids])
        P, ok, h = _fit(x, ids, samples)
        coef = np.einsum("gcs,gs->gc", P, values[samples])
        _store(H, ids[ok], coef[ok], h[ok], d)
        retry.extend(ids[~ok].tolist())
    for i in retry:
        depth = sets[i][0]
        while True:
            depth += 1
            s = _ring(topo, i, depth)
            if depth > 6:
                raise SingularFit(i)
            P, ok, h = _fit(x, np.array([i]), s[None, :])
            if ok[0]:
                coef = P[0] @ values[s]
                _store(H, np.array([i]), coef[None, :], h, d)
                sets[i] = (depth, s)
                break
    return H


def _store(H, ids, coef, h, d):
    if d == 1:
        H[ids, 0, 0] = 2.0 * coef[:, 2] / h ** 2
    else:
        h2 = h ** 2
        H[ids, 0, 0] = 2.0 * coef[:, 3] / h2
        H[ids, 0, 1] = H[ids, 1, 0] = coef[:, 4] / h2
        H[ids, 1, 1] = 2.0 * coef[:, 5] / h2


def absolute_hessian(H):
    """Replace eigenvalues by their absolute values: Q diag(|lambda|) Q^T."""
    H = np.asarray(H, dtype=float)
    lam, Q = np.linalg.eigh(H)
    return np.einsum("...ij,...j,...kj->...ik", Q, np.abs(lam), Q)


def _det_shift(Habs, alpha):
    """det(alpha I + Habs) for a stack of symmetric matrices."""
    d = Habs.shape[-1]
    if d == 1:
        return alpha + Habs[:, 0, 0]
    tr = Habs[:, 0, 0] + Habs[:, 1, 1]
    det = Habs[:, 0, 0] * Habs[:, 1, 1] - Habs[:, 0, 1] * Habs[:, 1, 0]
    return alpha * alpha + alpha * tr + det


def element_average(mesh, vertex_field):
    return vertex_field[mesh.elements].mean(axis=1)


def solve_alpha(mesh, Habs_vertex, exponent=None, rtol=1e-10):
    """Regularization parameter alpha_h solving

        sum_K |K| det(alpha I + |H_K|)^e = 2 sum_K |K| det(|H_K|)^e,

    with ``e = 2/(d+4)`` unless ``exponent`` is given; |H_K| is the element
    average of the vertex values. Found by bisection.
    """
    d = mesh.dim
    e = 2.0 / (d + 4) if exponent is None else float(exponent)
    vol = element_volumes(mesh)
    HK = element_average(mesh, np.asarray(Habs_vertex, dtype=float))
    det0 = np.clip(_det_shift(HK, 0.0), 0.0, None)
    target = 2.0 * np.sum(vol * det0 ** e)
    if not target > 0:
        raise FlatField("recovered Hessian vanishes identically")

    def lhs(a):
        return np.sum(vol * np.clip(_det_shift(HK, a), 0.0, None) ** e)

    lo = 0.0
    hi = float(np.linalg.eigvalsh(HK).max())
    if not hi > 0:
        raise FlatField("recovered Hessian vanishes identically")
    while lhs(hi) < target:
        lo = hi
        hi *= 2.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if lhs(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class MetricField:
    """Per-vertex SPD metric with element averages."""

    vertex: np.ndarray
    elements: np.ndarray
    alpha: float
    flat: bool = False

    @cached_property
    def element(self):
        return self.vertex[self.elements].mean(axis=1)

    @cached_property
    def sqrt_det_vertex(self):
        return np.sqrt(np.linalg.det(self.vertex))

    @cached_property
    def sqrt_det_element(self):
        return np.sqrt(np.linalg.det(self.element))


def uniform_metric(mesh):
    I = np.broadcast_to(np.eye(mesh.dim), (mesh.n_vertices, mesh.dim, mesh.dim)).copy()
    return MetricField(I, mesh.elements, alpha=float("nan"), flat=True)


def build_metric(mesh, nodal_u, alpha_exponent=None):
    """M = det(alpha_h I + |H|)^(-1/(d+4)) (alpha_h I + |H|) at every vertex; identity for a flat field."""
    nodal_u = np.asarray(nodal_u, dtype=float)
    Habs = absolute_hessian(recover_hessian(mesh, nodal_u))
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    scale = (np.ptp(nodal_u) + np.abs(nodal_u).max()) / float(np.sum((hi - lo) ** 2))
    if not np.abs(Habs).max() > 1e-10 * scale:
        return uniform_metric(mesh)
    try:
        alpha = solve_alpha(mesh, Habs, exponent=alpha_exponent)
    except FlatField:
        return uniform_metric(mesh)
    return MetricField(metric_tensor(Habs, alpha), mesh.elements, alpha=alpha)


def metric_tensor(Habs, alpha):
    """det(alpha I + |H|)^(-1/(d+4)) (alpha I + |H|) for a stack of d x d matrices."""
    Habs = np.asarray(Habs, dtype=float)
    d = Habs.shape[-1]
    B = Habs + alpha * np.eye(d)
    det = _det_shift(Habs.reshape(-1, d, d), alpha).reshape(Habs.shape[:-2])
    return det[..., None, None] ** (-1.0 / (d + 4)) * B
