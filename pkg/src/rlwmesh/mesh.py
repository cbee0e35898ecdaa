"""Simplicial meshes (intervals in 1D, triangles in 2D) with fixed connectivity.

Vertices are stored interior-first: indices ``0 .. n_interior-1`` are interior
vertices and the remaining ones lie on the boundary. Connectivity is shared
(through a :class:`Topology`) by every mesh of a simulation; moving the mesh
only ever replaces the coordinate array.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import MeshTangled, NonpositiveVolume, PointLocationFailed

__all__ = [
    "Topology",
    "SimplicialMesh",
    "MovingMeshInterval",
    "NonsingularityReport",
    "interval_mesh",
    "rectangle_mesh",
    "mesh_from_arrays",
    "edge_matrix",
    "edge_matrices",
    "element_volume",
    "element_volumes",
    "element_patch",
    "check_nonsingular",
    "locate_points",
]


class Topology:
    """Connectivity and boundary classification, immutable once built."""

    def __init__(self, elements, n_vertices, n_interior, boundary_tangents, boundary_tags=None):
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        self.elements.setflags(write=False)
        self.n_vertices = int(n_vertices)
        self.n_interior = int(n_interior)
        self.dim = self.elements.shape[1] - 1
        nb = self.n_vertices - self.n_interior
        self.boundary_tangents = np.asarray(boundary_tangents, dtype=float).reshape(nb, self.dim)
        if boundary_tags is None:
            boundary_tags = np.where(np.any(self.boundary_tangents != 0, axis=1), 0, -1)
        self.boundary_tags = np.asarray(boundary_tags, dtype=np.int64)
        if self.elements.max() >= self.n_vertices or self.elements.min() < 0:
            raise ValueError("element refers to a vertex index out of range")

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @cached_property
    def patch_ptr_elems(self):
        """CSR layout of vertex patches: (ptr, element ids, local index)."""
        nv, d1 = self.n_vertices, self.dim + 1
        flat = self.elements.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=nv)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        return ptr, order // d1, order % d1

    @cached_property
    def neighbors(self):
        """``neighbors[k, j]`` is the element across the face opposite local vertex j (-1 on the boundary)."""
        n, d1 = self.elements.shape
        nb = -np.ones((n, d1), dtype=np.int64)
        faces = []
        for j in range(d1):
            cols = [c for c in range(d1) if c != j]
            f = np.sort(self.elements[:, cols], axis=1)
            faces.append(f)
        allf = np.concatenate(faces)
        owner = np.tile(np.arange(n), d1)
        local = np.repeat(np.arange(d1), n)
        keys = np.ascontiguousarray(allf).view([("", allf.dtype)] * allf.shape[1]).ravel()
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        same = sk[1:] == sk[:-1]
        a, b = order[:-1][same], order[1:][same]
        nb[owner[a], local[a]] = owner[b]
        nb[owner[b], local[b]] = owner[a]
        return nb

    @cached_property
    def vertex_neighbors(self):
        """Sorted list of edge-adjacent vertices for each vertex."""
        d1 = self.dim + 1
        pairs = []
        for i in range(d1):
            for j in range(d1):
                if i != j:
                    pairs.append(self.elements[:, [i, j]])
        pairs = np.unique(np.concatenate(pairs), axis=0)
        ptr = np.searchsorted(pairs[:, 0], np.arange(self.n_vertices + 1))
        return [pairs[ptr[i]:ptr[i + 1], 1] for i in range(self.n_vertices)]


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    vertices: np.ndarray
    topology: Topology = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape != (self.topology.n_vertices, self.topology.dim):
            raise ValueError(f"vertex array has shape {v.shape}, expected "
                             f"{(self.topology.n_vertices, self.topology.dim)}")
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self):
        return self.topology.dim

    @property
    def elements(self):
        return self.topology.elements

    @property
    def n_vertices(self):
        return self.topology.n_vertices

    @property
    def n_elements(self):
        return self.topology.n_elements

    @property
    def n_interior(self):
        return self.topology.n_interior

    @property
    def boundary_tags(self):
        return self.topology.boundary_tags

    def with_vertices(self, vertices):
        return SimplicialMesh(np.array(vertices, dtype=float), self.topology)

    def snap_boundary(self, reference):
        """Put boundary vertices back on the boundary line through their reference position."""
        ni = self.n_interior
        x = self.vertices.copy()
        a = reference.vertices[ni:]
        t = self.topology.boundary_tangents
        x[ni:] = a + np.sum((x[ni:] - a) * t, axis=1, keepdims=True) * t
        return self.with_vertices(x)

    @cached_property
    def domain_volume(self):
        return float(element_volumes(self, check=False).sum())


def edge_matrices(mesh):
    """Edge matrices ``E_K = [x_1 - x_0, ..., x_d - x_0]`` of all elements, shape (N, d, d)."""
    xe = mesh.vertices[mesh.elements]
    return np.swapaxes(xe[:, 1:, :] - xe[:, :1, :], 1, 2)


def edge_matrix(mesh, k):
    return edge_matrices_of(mesh.vertices[mesh.elements[k]])


def edge_matrices_of(xe):
    xe = np.asarray(xe, dtype=float)
    return np.swapaxes(xe[..., 1:, :] - xe[..., :1, :], -1, -2)


def element_volumes(mesh, check=True):
    E = edge_matrices(mesh)
    vol = np.linalg.det(E) / math.factorial(mesh.dim)
    if check:
        bad = np.flatnonzero(vol <= 0)
        if bad.size:
            raise NonpositiveVolume(bad)
    return vol


def element_volume(mesh, k):
    vol = np.linalg.det(edge_matrix(mesh, k)) / math.factorial(mesh.dim)
    if vol <= 0:
        raise NonpositiveVolume([k])
    return float(vol)


def element_patch(mesh, i):
    ptr, elems, _ = mesh.topology.patch_ptr_elems
    return sorted(int(k) for k in elems[ptr[i]:ptr[i + 1]])


@dataclass
class NonsingularityReport:
    min_volume: float
    min_height: float
    n_inverted: int

    @property
    def ok(self):
        return self.n_inverted == 0 and self.min_volume > 0 and self.min_height > 0

    def __bool__(self):
        return self.ok


def element_heights(mesh, volumes=None):
    vol = element_volumes(mesh, check=False) if volumes is None else volumes
    if mesh.dim == 1:
        return vol
    xe = mesh.vertices[mesh.elements]
    edges = np.stack([xe[:, 1] - xe[:, 0], xe[:, 2] - xe[:, 1], xe[:, 0] - xe[:, 2]], axis=1)
    longest = np.linalg.norm(edges, axis=2).max(axis=1)
    return 2.0 * vol / longest


def check_nonsingular(mesh):
    vol = element_volumes(mesh, check=False)
    h = element_heights(mesh, vol)
    return NonsingularityReport(float(vol.min()), float(h.min()), int(np.count_nonzero(vol <= 0)))


# ---------------------------------------------------------------------------
# construction


def _orient(vertices, elements):
    elements = np.array(elements, dtype=np.int64)
    det = np.linalg.det(edge_matrices_of(vertices[elements]))
    flip = det < 0
    if elements.shape[1] == 2:
        elements[flip] = elements[flip][:, ::-1]
    else:
        elements[flip, 1], elements[flip, 2] = elements[flip, 2].copy(), elements[flip, 1].copy()
    return elements


def _boundary_vertices(elements, n_vertices):
    """Boundary vertex ids and, for 2D, the boundary edges."""
    d1 = elements.shape[1]
    faces = []
    for j in range(d1):
        faces.append(np.sort(np.delete(elements, j, axis=1), axis=1))
    faces = np.concatenate(faces)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    bfaces = uniq[counts == 1]
    return np.unique(bfaces), bfaces


def mesh_from_arrays(vertices, elements, corner_tol=1e-10):
    """Build a mesh from arbitrary arrays: reorders vertices interior-first and
    fixes element orientation.

    Boundary vertices whose two boundary edges are collinear get a sliding
    tangent; all others (1D endpoints, polygon corners) are fixed.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim == 1:
        vertices = vertices[:, None]
    nv, dim = vertices.shape
    elements = np.asarray(elements, dtype=np.int64)
    bverts, bfaces = _boundary_vertices(elements, nv)
    is_b = np.zeros(nv, dtype=bool)
    is_b[bverts] = True
    order = np.concatenate([np.flatnonzero(~is_b), np.flatnonzero(is_b)])
    perm = np.empty(nv, dtype=np.int64)
    perm[order] = np.arange(nv)
    new_vertices = vertices[order]
    new_elements = _orient(new_vertices, perm[elements])
    n_interior = int(np.count_nonzero(~is_b))
    nb = nv - n_interior
    tangents = np.zeros((nb, dim))
    tags = -np.ones(nb, dtype=np.int64)
    if dim == 2:
        bf = perm[bfaces]
        incident = [[] for _ in range(nb)]
        for e in bf:
            for a in e:
                incident[a - n_interior].append(e)
        for ib, edges in enumerate(incident):
            dirs = []
            for e in edges:
                dvec = new_vertices[e[1]] - new_vertices[e[0]]
                dirs.append(dvec / np.linalg.norm(dvec))
            if len(dirs) == 2 and abs(dirs[0][0] * dirs[1][1] - dirs[0][1] * dirs[1][0]) < corner_tol:
                t = dirs[0]
                if t[0] < -corner_tol or (abs(t[0]) <= corner_tol and t[1] < 0):
                    t = -t
                tangents[ib] = t
                # tag = edge line id from direction and offset
                tags[ib] = 0
        # label collinear groups with distinct ids
        lines = {}
        for ib in np.flatnonzero(tags >= 0):
            t = tangents[ib]
            nrm = np.array([-t[1], t[0]])
            key = (round(t[0], 8), round(t[1], 8), round(float(nrm @ new_vertices[n_interior + ib]), 6))
            tags[ib] = lines.setdefault(key, len(lines))
    topo = Topology(new_elements, nv, n_interior, tangents, tags)
    return SimplicialMesh(new_vertices, topo)


def interval_mesh(a, b, n):
    """Uniform mesh of (a, b) with ``n`` elements."""
    x = np.linspace(a, b, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return mesh_from_arrays(x[:, None], elements)


def rectangle_mesh(x0, x1, y0, y1, nx, ny, pattern="cross"):
    """Structured triangulation of a rectangle.

    ``pattern="diagonal"`` splits each cell into two right triangles
    (2*nx*ny elements); ``pattern="cross"`` adds the cell centre and splits
    each cell into four (4*nx*ny elements).
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = [np.column_stack([X.ravel(), Y.ravel()])]
    node = lambda i, j: i * (ny + 1) + j  # noqa: E731
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    a, b, c, d = node(I, J), node(I + 1, J), node(I + 1, J + 1), node(I, J + 1)
    if pattern == "diagonal":
        elements = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    elif pattern == "cross":
        m = (nx + 1) * (ny + 1) + np.arange(nx * ny)
        verts.append(np.column_stack([0.5 * (xs[I] + xs[I + 1]), 0.5 * (ys[J] + ys[J + 1])]))
        elements = np.concatenate([
            np.column_stack([a, b, m]), np.column_stack([b, c, m]),
            np.column_stack([c, d, m]), np.column_stack([d, a, m]),
        ])
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return mesh_from_arrays(np.concatenate(verts), elements)


# ---------------------------------------------------------------------------
# point location


def barycentric(mesh, elems, points):
    """Barycentric coordinates of ``points`` with respect to elements ``elems``."""
    xe = mesh.vertices[mesh.elements[elems]]
    E = edge_matrices_of(xe)
    rhs = (points - xe[:, 0, :])[..., None]
    lam = np.linalg.solve(E, rhs)[..., 0]
    return np.column_stack([1.0 - lam.sum(axis=1), lam])


def locate_points(mesh, points, guess=None, tol=1e-10, max_walk=None):
    """Find the host element of every point and its barycentric coordinates.

    Walks from ``guess`` (element ids) towards each point, crossing the face
    with the most negative barycentric coordinate; points that walk off the
    mesh fall back to an exhaustive search, and points outside the mesh are
    clamped to the nearest element with a warning.
    """
    points = np.asarray(points, dtype=float).reshape(-1, mesh.dim)
    npts = points.shape[0]
    if mesh.dim == 1:
        return _locate_1d(mesh, points[:, 0], tol)
    nbr = mesh.topology.neighbors
    cur = np.zeros(npts, dtype=np.int64) if guess is None else np.array(guess, dtype=np.int64)
    lam = np.empty((npts, mesh.dim + 1))
    active = np.arange(npts)
    max_walk = max_walk or 4 * int(math.sqrt(mesh.n_elements)) + 20
    failed = []
    for _ in range(max_walk):
        if active.size == 0:
            break
        la = barycentric(mesh, cur[active], points[active])
        lam[active] = la
        jmin = np.argmin(la, axis=1)
        inside = la[np.arange(active.size), jmin] >= -tol
        move = active[~inside]
        nxt = nbr[cur[move], jmin[~inside]]
        off = nxt < 0
        failed.extend(move[off].tolist())
        cur[move[~off]] = nxt[~off]
        active = move[~off]
    failed.extend(active.tolist())
    for p in failed:
        cur[p], lam[p] = _exhaustive(mesh, points[p], tol)
    return cur, lam


def _exhaustive(mesh, point, tol):
    la = barycentric(mesh, np.arange(mesh.n_elements), np.broadcast_to(point, (mesh.n_elements, mesh.dim)))
    worst = la.min(axis=1)
    k = int(np.argmax(worst))
    if worst[k] < -tol:
        if worst[k] < -1e-6:
            warnings.warn(PointLocationFailed(f"point {point} lies outside the mesh; clamped to element {k}"))
        lam = np.clip(la[k], 0.0, None)
        return k, lam / lam.sum()
    return k, la[k]


def _locate_1d(mesh, x, tol):
    xe = mesh.vertices[mesh.elements, 0]
    left = xe.min(axis=1)
    order = np.argsort(left)
    sl = left[order]
    pos = np.clip(np.searchsorted(sl, x, side="right") - 1, 0, len(sl) - 1)
    k = order[pos]
    a, b = xe[k, 0], xe[k, 1]
    t = (x - a) / (b - a)
    lo = t < -tol
    hi = t > 1 + tol
    if np.any(lo | hi):
        if np.any((t < -1e-6) | (t > 1 + 1e-6)):
            warnings.warn(PointLocationFailed("points outside the 1D mesh were clamped"))
    t = np.clip(t, 0.0, 1.0)
    return k, np.column_stack([1.0 - t, t])


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MovingMeshInterval:
    """Two meshes joined by straight-line vertex motion over [t_start, t_end]."""

    mesh_start: SimplicialMesh
    mesh_end: SimplicialMesh
    t_start: float
    t_end: float

    def __post_init__(self):
        if self.mesh_start.topology is not self.mesh_end.topology:
            raise ValueError("interval meshes must share connectivity")
        if not self.t_end > self.t_start:
            raise ValueError("empty time interval")

    @property
    def dt(self):
        return self.t_end - self.t_start

    @cached_property
    def velocity(self):
        return (self.mesh_end.vertices - self.mesh_start.vertices) / self.dt

    @property
    def is_static(self):
        return not np.any(self.velocity)

    def vertices_at(self, t):
        s = (t - self.t_start) / self.dt
        return (1.0 - s) * self.mesh_start.vertices + s * self.mesh_end.vertices

    def mesh_at(self, t):
        if t == self.t_start:
            return self.mesh_start
        if t == self.t_end:
            return self.mesh_end
        return self.mesh_start.with_vertices(self.vertices_at(t))

    def truncate(self, t_new):
        """Shorten the interval keeping the vertex velocities: x_end <- x_start + (t_new - t_start) * xdot."""
        if t_new == self.t_end:
            return self
        x = self.mesh_start.vertices + (t_new - self.t_start) * self.velocity
        return MovingMeshInterval(self.mesh_start, self.mesh_start.with_vertices(x), self.t_start, t_new)

    def min_volume(self):
        """Smallest element volume over the whole interval (volumes are polynomial in t)."""
        E0 = edge_matrices(self.mesh_start)
        E1 = edge_matrices(self.mesh_end)
        fact = math.factorial(self.mesh_start.dim)
        if self.mesh_start.dim == 1:
            return float(min(E0.min(), E1.min()))
        # det(E0 + s D) = a s^2 + b s + c for 2x2 matrices
        D = E1 - E0
        c = np.linalg.det(E0)
        a = np.linalg.det(D)
        b = (E0[:, 0, 0] * D[:, 1, 1] + D[:, 0, 0] * E0[:, 1, 1]
             - E0[:, 0, 1] * D[:, 1, 0] - D[:, 0, 1] * E0[:, 1, 0])
        vals = np.minimum(c, a + b + c)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -b / (2 * a)
        interior = (a > 0) & (s > 0) & (s < 1)
        vals = np.where(interior, np.minimum(vals, c - b * b / (4 * np.where(a == 0, 1, a))), vals)
        return float(vals.min() / fact)

    def check(self):
        vmin = self.min_volume()
        if vmin <= 0:
            raise MeshTangled(f"mesh becomes singular inside [{self.t_start}, {self.t_end}] (min volume {vmin:g})")
        return vmin
