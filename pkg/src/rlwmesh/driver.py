"""Time stepping loop, convergence studies, conservation sweeps and reference runs."""
from __future__ import annotations

import hashlib
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import NoExactSolution
from .fem import ErrorAccumulator, RLWSystem, conserved_quantities, forward_map, _space
from .mesh import (MovingMeshInterval, SimplicialMesh, check_nonsingular, interval_mesh,
                   locate_points, rectangle_mesh)
from .metric import build_metric
from .mmpde import MeshMover
from .problems import ProblemSpec, catalog
from .radau import StepController, integrate_interval

__all__ = [
    "RunConfig",
    "Simulation",
    "RunResult",
    "make_mesh",
    "advance_one_step",
    "adapt_initial_mesh",
    "run_simulation",
    "run_convergence_study",
    "run_conservation_sweep",
    "reference_solution",
    "observed_orders",
]

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Everything that determines a run besides the problem itself."""

    n: int = 200
    moving: bool = True
    pattern: str = "cross"
    # mover
    tau: Optional[float] = None
    mover_method: str = "bdf"
    mmpde_substep_safety: float = 0.4
    alpha_exponent: Optional[float] = None
    initial_adapt_iters: int = 5
    mesh_boundary: str = "sliding"
    initial_adapt_time: Optional[float] = None
    # integrator
    rtol: float = 1e-7
    atol: float = 1e-9
    dt0: float = 1e-2
    dt_min: float = 1e-10
    dt_max: float = np.inf
    newton_max_iter: int = 7
    # output
    T: Optional[float] = None
    snapshot_times: Sequence[float] = ()
    out_dir: Optional[str] = None
    track_errors: bool = True
    checkpoint_every: int = 0

    def controller(self):
        return StepController(dt=self.dt0, rtol=self.rtol, atol=self.atol, dt_min=self.dt_min,
                              dt_max=self.dt_max, newton_max_iter=self.newton_max_iter)


def make_mesh(problem, n, pattern="cross"):
    """Uniform initial mesh with ``n`` elements (1D intervals or 2D triangles)."""
    if problem.dim == 1:
        a, b = problem.domain
        return interval_mesh(a, b, n)
    per_square = 4 if pattern == "cross" else 2
    m = int(round(math.sqrt(n / per_square)))
    if per_square * m * m != n:
        raise ValueError(f"{n} triangles cannot be laid out as a {pattern!r} square grid")
    x0, x1, y0, y1 = problem.domain
    return rectangle_mesh(x0, x1, y0, y1, m, m, pattern=pattern)


@dataclass
class RunResult:
    problem: str
    n: int
    moving: bool
    t: float
    mesh: SimplicialMesh
    u: np.ndarray
    v: np.ndarray
    L2: float = float("nan")
    Linf: float = float("nan")
    E0: tuple = (float("nan"), float("nan"))
    E: tuple = (float("nan"), float("nan"))
    n_steps: int = 0
    n_rejected: int = 0
    wall: float = 0.0
    step_log: list = field(default_factory=list, repr=False)
    conservation: list = field(default_factory=list, repr=False)
    errors: list = field(default_factory=list, repr=False)
    snapshots: dict = field(default_factory=dict, repr=False)
    min_volume: float = float("inf")
    nonsingular_failures: int = 0
    T: float = float("nan")

    @property
    def dE1(self):
        return self.E[0] - self.E0[0]

    @property
    def dE2(self):
        return self.E[1] - self.E0[1]


class Simulation:
    """State of one run: mesh, (u, v), controller and the accumulated logs."""

    def __init__(self, problem: ProblemSpec, config: RunConfig, mesh=None):
        self.problem = problem
        self.config = config
        self.T = problem.T if config.T is None else config.T
        self.reference = make_mesh(problem, config.n, config.pattern) if mesh is None else mesh
        self.mesh = self.reference
        tau = problem.mesh_tau if config.tau is None else config.tau
        self.mover = MeshMover(self.reference, tau, method=config.mover_method,
                               substep_safety=config.mmpde_substep_safety,
                               boundary=config.mesh_boundary) if config.moving else None
        self.system = RLWSystem(problem, self.reference.topology)
        self.controller = config.controller()
        self.t = 0.0
        self.u = self.v = None
        self.n_steps = 0
        self.n_rejected = 0
        self.step_log = []
        self.conservation = []
        self.snapshots = {}
        self.min_volume = np.inf
        self.nonsingular_failures = 0
        self.errors = None
        if config.track_errors and problem.has_exact:
            self.errors = ErrorAccumulator(problem.exact)

    # -- initialization -----------------------------------------------------
    def initialize(self):
        p = self.problem
        if self.mover is not None and p.u0 is not None:
            self.mesh = adapt_initial_mesh(self.mesh, p, self.mover, self.config.initial_adapt_iters,
                                           self.config.initial_adapt_time, self.config.alpha_exponent)
        self._set_initial_values()
        self.E0 = conserved_quantities(self.mesh, self.u, p.mu)
        self._record()
        return self

    def _set_initial_values(self):
        p = self.problem
        x = self.mesh.vertices
        ni = self.mesh.n_interior
        u = p.initial_values(x).copy()
        u[ni:] = p.boundary_values(x[ni:], self.t)
        S = _space(self.mesh)
        geom = S.geometry(x)
        self.u = u
        self.v = forward_map(S.mass(geom), S.stiffness(geom, p.mu), u)

    def _record(self):
        E = conserved_quantities(self.mesh, self.u, self.problem.mu)
        self.conservation.append((self.t, E[0], E[1], E[0] - self.E0[0], E[1] - self.E0[1]))
        if self.errors is not None:
            self.errors.add(self.mesh, self.u, self.t)
        rep = check_nonsingular(self.mesh)
        self.min_volume = min(self.min_volume, rep.min_volume)
        if not rep.ok:
            self.nonsingular_failures += 1

    # -- stepping -----------------------------------------------------------
    @property
    def done(self):
        return self.t >= self.T * (1.0 - 1e-14)

    def next_stop(self):
        """Next time the integration must land on exactly (a snapshot time or T)."""
        stops = [ts for ts in self.config.snapshot_times if ts > self.t * (1 + 1e-14) and ts < self.T]
        return min(stops + [self.T])

    def step(self):
        if self.done:
            return
        advance_one_step(self)
        self._record()
        for ts in self.config.snapshot_times:
            if ts not in self.snapshots and self.t >= ts * (1 - 1e-14):
                self.snapshots[ts] = (self.t, self.mesh.vertices.copy(), self.u.copy())

    def run(self, checkpoint_path=None):
        start = time.perf_counter()
        while not self.done:
            self.step()
            if checkpoint_path and self.config.checkpoint_every and self.n_steps % self.config.checkpoint_every == 0:
                self.save_checkpoint(checkpoint_path)
        return self.result(time.perf_counter() - start)

    def result(self, wall=0.0):
        E = conserved_quantities(self.mesh, self.u, self.problem.mu)
        res = RunResult(self.problem.name, self.config.n, self.config.moving, self.t, self.mesh,
                        self.u, self.v, E0=self.E0, E=E, n_steps=self.n_steps, n_rejected=self.n_rejected,
                        wall=wall, step_log=self.step_log, conservation=self.conservation,
                        snapshots=self.snapshots, min_volume=self.min_volume,
                        nonsingular_failures=self.nonsingular_failures, T=self.T)
        if self.errors is not None:
            res.L2, res.Linf = self.errors.L2, self.errors.Linf
            res.errors = self.errors.history
        return res

    # -- restart ------------------------------------------------------------
    def save_checkpoint(self, path):
        ctrl = self.controller
        data = dict(
            t=self.t, vertices=self.mesh.vertices, u=self.u, v=self.v, E0=np.array(self.E0),
            ctrl=np.array([ctrl.dt, np.nan if ctrl.err_prev is None else ctrl.err_prev, ctrl.faccon,
                           float(ctrl.rejected_last), float(ctrl.first)]),
            counters=np.array([self.n_steps, self.n_rejected, self.nonsingular_failures]),
            min_volume=self.min_volume,
            conservation=np.array(self.conservation, dtype=float).reshape(-1, 5),
        )
        if self.mover is not None and self.mover._hosts is not None:
            data["hosts"] = self.mover._hosts
        if self.errors is not None:
            data["err_acc"] = np.array([self.errors.t, self.errors.last[0], self.errors.last[1],
                                        self.errors.L2, self.errors.Linf])
            data["err_hist"] = np.array(self.errors.history, dtype=float).reshape(-1, 3)
        tmp = str(path) + ".tmp.npz"
        np.savez(tmp, **data)
        os.replace(tmp, path)

    def load_checkpoint(self, path):
        with np.load(path) as d:
            self.t = float(d["t"])
            self.mesh = self.reference.with_vertices(d["vertices"])
            self.u, self.v = d["u"].copy(), d["v"].copy()
            self.E0 = tuple(float(e) for e in d["E0"])
            c = d["ctrl"]
            ctrl = self.controller
            ctrl.dt = float(c[0])
            ctrl.err_prev = None if np.isnan(c[1]) else float(c[1])
            ctrl.faccon = float(c[2])
            ctrl.rejected_last, ctrl.first = bool(c[3]), bool(c[4])
            self.n_steps, self.n_rejected, self.nonsingular_failures = (int(k) for k in d["counters"])
            self.min_volume = float(d["min_volume"])
            self.conservation = [tuple(r) for r in d["conservation"]]
            if self.mover is not None and "hosts" in d:
                self.mover._hosts = d["hosts"].copy()
            if self.errors is not None and "err_acc" in d:
                a = d["err_acc"]
                self.errors.t, self.errors.last = float(a[0]), (float(a[1]), float(a[2]))
                self.errors.L2, self.errors.Linf = float(a[3]), float(a[4])
                self.errors.history = [tuple(r) for r in d["err_hist"]]
        return self


def adapt_initial_mesh(mesh, problem, mover, iters=5, duration=None, alpha_exponent=None):
    """Equilibrate the mesh to the initial data by repeated metric/move cycles."""
    duration = 100.0 * mover.tau if duration is None else duration
    for _ in range(iters):
        u = problem.initial_values(mesh.vertices)
        metric = build_metric(mesh, u, alpha_exponent=alpha_exponent)
        if metric.flat:
            break
        mesh = mover.move(mesh, metric, duration)
    return mesh


def advance_one_step(sim: Simulation):
    """Metric from u^n, mesh move to t^n + dt, one accepted Radau step on the interval."""
    ctrl = sim.controller
    target = sim.next_stop()
    dt = min(ctrl.dt, target - sim.t)
    mesh_n = sim.mesh
    if sim.mover is not None:
        metric = build_metric(mesh_n, sim.u, alpha_exponent=sim.config.alpha_exponent)
        mesh_new = sim.mover.move(mesh_n, metric, dt)
    else:
        mesh_new = mesh_n
    interval = MovingMeshInterval(mesh_n, mesh_new, sim.t, sim.t + dt)
    if sim.mover is not None:
        interval.check()
    y0 = np.concatenate([sim.v, sim.u])
    y1, used, records = integrate_interval(sim.system, interval, y0, ctrl)
    nv = mesh_n.n_vertices
    sim.v, sim.u = y1[:nv].copy(), y1[nv:].copy()
    sim.mesh = used.mesh_end
    sim.t = used.t_end
    sim.n_steps += 1
    sim.n_rejected += sum(not r.accepted for r in records)
    acc = records[-1]
    sim.step_log.append(dict(step=sim.n_steps, t=sim.t, dt=acc.dt, error=acc.error,
                             newton=acc.newton_iters, rejected=len(records) - 1,
                             dt_next=ctrl.dt))
    return sim


def run_simulation(problem, config: RunConfig | None = None, **overrides):
    if isinstance(problem, str):
        problem = catalog(problem)
    config = replace(config or RunConfig(), **overrides)
    sim = Simulation(problem, config).initialize()
    res = sim.run()
    log.info("%s N=%d %s: t=%.4g steps=%d rejected=%d L2=%.3e wall=%.1fs", problem.name, config.n,
             "moving" if config.moving else "fixed", res.t, res.n_steps, res.n_rejected, res.L2, res.wall)
    if config.out_dir:
        from .io import write_run
        write_run(res, problem, config, config.out_dir)
    return res


def observed_orders(ns, errs, dim=1):
    """Convergence orders in the mesh size h ~ N^(-1/d) between successive rows."""
    out = [float("nan")]
    for k in range(1, len(ns)):
        out.append(math.log(errs[k - 1] / errs[k]) / math.log((ns[k] / ns[k - 1]) ** (1.0 / dim)))
    return out


def run_convergence_study(problem, N_list, moving=True, config: RunConfig | None = None):
    """Rows (N, L2, order, Linf, order) of time-integrated error norms.

    A failing run ends the table; the rows computed so far are returned.
    """
    if isinstance(problem, str):
        problem = catalog(problem)
    if not problem.has_exact:
        raise NoExactSolution(f"{problem.name} has no exact solution")
    ns, l2, linf = [], [], []
    for n in N_list:
        try:
            res = run_simulation(problem, config, n=n, moving=moving)
        except Exception as exc:  # partial table on failure
            log.error("N=%d failed: %s", n, exc)
            break
        ns.append(n)
        l2.append(res.L2)
        linf.append(res.Linf)
    o2 = observed_orders(ns, l2, problem.dim)
    oi = observed_orders(ns, linf, problem.dim)
    return [dict(N=n, L2=a, L2_order=b, Linf=c, Linf_order=d) for n, a, b, c, d in zip(ns, l2, o2, linf, oi)]


def run_conservation_sweep(problem, N_list, moving=True, config: RunConfig | None = None):
    """Rows (N, dE1(T), dE2(T)) together with the run results."""
    if isinstance(problem, str):
        problem = catalog(problem)
    rows = []
    for n in N_list:
        res = run_simulation(problem, config, n=n, moving=moving, track_errors=False)
        rows.append(dict(N=n, dE1=res.dE1, dE2=res.dE2, E1=res.E[0], E2=res.E[1]))
    return rows


def _cache_dir():
    return Path(os.environ.get("RLWMESH_CACHE", Path.home() / ".cache" / "rlwmesh"))


def reference_solution(problem, n=6000, times=None, cache_dir=None, config: RunConfig | None = None):
    """Fixed-mesh fine-grid solution at the requested times, cached on disk as npz.

    Returns a dict mapping each time to (x, u).
    """
    if isinstance(problem, str):
        problem = catalog(problem)
    times = tuple(sorted(times if times is not None else (problem.T,)))
    cache = Path(cache_dir) if cache_dir is not None else _cache_dir()
    cfg = replace(config or RunConfig(), n=n, moving=False, snapshot_times=times, track_errors=False)
    tag = "_".join(f"{t:g}" for t in times)
    key = repr((problem.alpha, problem.beta, problem.gamma, problem.delta, problem.mu, problem.p,
                problem.domain, sorted(problem.params.items())))
    digest = hashlib.sha1(key.encode()).hexdigest()[:10]
    path = cache / f"{problem.name}_{digest}_N{n}_rtol{cfg.rtol:g}_t{tag}.npz"
    if path.exists():
        with np.load(path) as d:
            return {t: (d[f"x{k}"], d[f"u{k}"]) for k, t in enumerate(times)}
    res = run_simulation(problem, cfg)
    out = {}
    for k, t in enumerate(times):
        _, x, u = res.snapshots[t]
        out[t] = (x, u)
    cache.mkdir(parents=True, exist_ok=True)
    np.savez(path, **{f"x{k}": out[t][0] for k, t in enumerate(times)},
             **{f"u{k}": out[t][1] for k, t in enumerate(times)})
    return out


def sample_solution(mesh, u, points):
    """Piecewise linear interpolation of nodal ``u`` at ``points``."""
    pts = np.asarray(points, float).reshape(-1, mesh.dim)
    hosts, lam = locate_points(mesh, pts)
    return np.einsum("pj,pj->p", lam, np.asarray(u)[mesh.elements[hosts]])
