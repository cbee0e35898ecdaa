"""Three-stage Radau IIA (order 5) for linearly implicit DAEs B(t) y' = F(t, y).

The system object passed around as ``dae`` needs

* ``mass(t)``: sparse B(t) (zero rows for algebraic equations),
* ``fun(t, y)`` and ``jac(t, y)`` (sparse dF/dy),
* ``diff_mask``: boolean mask of the differential components,
* optionally ``set_interval(interval)`` when the problem depends on mesh motion.

Stage equations for the increments Z_i = Y_i - y0 are

    B(t0 + c_i h) (A^{-1} Z)_i / h = F(t0 + c_i h, y0 + Z_i),

solved by simplified Newton with B and dF/dy frozen at the start of the step.
The Newton matrix is block-diagonalized through the eigenvalues of A^{-1}
(one real, one complex pair), so each iteration costs one real and one
complex sparse solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolveFailure, NewtonDiverged, StepTooSmall

__all__ = [
    "RadauTableau",
    "RADAU5",
    "StepController",
    "StepResult",
    "StepRecord",
    "ODESystem",
    "radau_step",
    "control_step",
    "integrate_interval",
    "integrate_fixed",
]

log = logging.getLogger(__name__)

_S6 = np.sqrt(6.0)


@dataclass(frozen=True)
class RadauTableau:
    c: np.ndarray
    a: np.ndarray

    @property
    def b(self):
        return self.a[-1]

    @cached_property
    def a_inv(self):
        return np.linalg.inv(self.a)

    @cached_property
    def eig(self):
        """Eigen-decomposition of A^{-1}: (real eigenvalue, complex eigenvalue, V, V^{-1}).

        Columns of V are ordered (real, complex, conjugate).
        """
        lam, V = np.linalg.eig(self.a_inv)
        r = int(np.argmin(np.abs(lam.imag)))
        cpx = [i for i in range(3) if i != r]
        k = cpx[0] if lam[cpx[0]].imag > 0 else cpx[1]
        order = [r, k, 3 - r - k]
        lam, V = lam[order], V[:, order]
        V[:, 2] = V[:, 1].conj()
        V[:, 0] = V[:, 0].real
        return float(lam[0].real), complex(lam[1]), V, np.linalg.inv(V)

    # embedded error weights (as in Hairer & Wanner's RADAU5)
    @property
    def error_weights(self):
        return np.array([-(13.0 + 7.0 * _S6) / 3.0, (-13.0 + 7.0 * _S6) / 3.0, -1.0 / 3.0])


RADAU5 = RadauTableau(
    c=np.array([(4.0 - _S6) / 10.0, (4.0 + _S6) / 10.0, 1.0]),
    a=np.array([
        [(88.0 - 7.0 * _S6) / 360.0, (296.0 - 169.0 * _S6) / 1800.0, (-2.0 + 3.0 * _S6) / 225.0],
        [(296.0 + 169.0 * _S6) / 1800.0, (88.0 + 7.0 * _S6) / 360.0, (-2.0 - 3.0 * _S6) / 225.0],
        [(16.0 - _S6) / 36.0, (16.0 + _S6) / 36.0, 1.0 / 9.0],
    ]),
)


@dataclass
class StepController:
    """Step size state for the two-step (PI-type) controller."""

    dt: float = 1e-2
    rtol: float = 1e-7
    atol: float = 1e-9
    safety: float = 0.9
    kappa: float = 0.08
    min_ratio: float = 0.2
    max_ratio: float = 5.0
    dt_min: float = 1e-12
    dt_max: float = np.inf
    newton_max_iter: int = 7
    newton_tol: float = 0.03
    err_prev: float | None = None
    faccon: float = 1.0
    rejected_last: bool = False
    first: bool = True

    def __post_init__(self):
        self.dt = float(np.clip(self.dt, self.dt_min, self.dt_max))

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def control_step(controller, error_norm, error_norm_prev=None):
    """Return (accept, dt_next).

    dt_next = dt * safety * err^(-1/6) * (err_prev / err)^kappa on acceptance
    with a previous error available; the plain err^(-1/6) rule otherwise.
    """
    if error_norm < 0:
        raise ValueError("error norm must be non-negative")
    err = max(float(error_norm), 1e-10)
    accept = err <= 1.0
    fac = controller.safety * err ** (-1.0 / 6.0)
    if accept and error_norm_prev is not None:
        fac *= (max(error_norm_prev, 1e-10) / err) ** controller.kappa
    fac = min(max(fac, controller.min_ratio), controller.max_ratio)
    if accept and controller.rejected_last:
        fac = min(fac, 1.0)
    dt_next = min(controller.dt * fac, controller.dt_max)
    if dt_next < controller.dt_min:
        raise StepTooSmall(f"step size {dt_next:g} fell below dt_min = {controller.dt_min:g}")
    return accept, dt_next


@dataclass
class StepResult:
    y: np.ndarray
    error: float
    newton_iters: int
    Z: np.ndarray = field(repr=False, default=None)


@dataclass
class StepRecord:
    t: float
    dt: float
    error: float
    accepted: bool
    newton_iters: int
    reason: str = ""


class ODESystem:
    """Adapter for an explicit ODE y' = f(t, y) (identity mass)."""

    def __init__(self, fun, jac, n):
        self._fun, self._jac, self.n = fun, jac, n
        self.diff_mask = np.ones(n, bool)
        self._I = sp.identity(n, format="csc")

    def mass(self, t):
        return self._I

    def fun(self, t, y):
        return np.atleast_1d(np.asarray(self._fun(t, y), float))

    def jac(self, t, y):
        return sp.csc_matrix(np.atleast_2d(self._jac(t, y)))


def _factor(A):
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise LinearSolveFailure(f"singular Newton matrix: {exc}") from exc
    return lu


def _rms(x, scale):
    return float(np.sqrt(np.mean((x / scale) ** 2)))


def radau_step(dae, t, y0, dt, controller, tableau=RADAU5, f0=None):
    """One Radau IIA step of size ``dt`` from (t, y0).

    Returns a StepResult with the stiffly accurate new state (last stage)
    and the weighted RMS error estimate over the differential components.
    Raises NewtonDiverged when the simplified Newton iteration fails.
    """
    y0 = np.asarray(y0, float)
    n = y0.size
    h = float(dt)
    c = tableau.c
    Ainv = tableau.a_inv
    lam_r, lam_c, V, Vinv = tableau.eig
    T = t + c * h

    B0 = sp.csc_matrix(dae.mass(t))
    J = sp.csc_matrix(dae.jac(t, y0))
    lu_r = _factor((lam_r / h) * B0 - J)
    lu_c = _factor((lam_c / h) * B0.astype(complex) - J.astype(complex))
    Bs = [dae.mass(Ti) for Ti in T]

    scale = controller.atol + controller.rtol * np.abs(y0)
    Z = np.zeros((3, n))
    dyno_old = None
    faccon = max(controller.faccon, 1e-16) ** 0.8
    converged = False
    it = 0
    for it in range(1, controller.newton_max_iter + 1):
        Y = y0 + Z
        AZ = Ainv @ Z / h
        G = np.empty((3, n))
        for i in range(3):
            G[i] = Bs[i] @ AZ[i] - dae.fun(T[i], Y[i])
        if not np.all(np.isfinite(G)):
            raise NewtonDiverged("non-finite stage residual")
        R = Vinv @ (-G)
        W0 = lu_r.solve(R[0].real)
        W1 = lu_c.solve(R[1])
        W = np.array([W0.astype(complex), W1, W1.conj()])
        dZ = (V @ W).real
        dyno = _rms(dZ, scale)
        if dyno_old is not None:
            theta = dyno / max(dyno_old, 1e-300)
            if theta >= 0.99:
                raise NewtonDiverged(f"Newton contraction {theta:.3f} at t={t:g}, dt={h:g}")
            faccon = theta / (1.0 - theta)
            # predicted error after the remaining iterations
            if faccon * dyno * theta ** max(controller.newton_max_iter - 1 - it, 0) >= controller.newton_tol:
                raise NewtonDiverged(f"Newton too slow (theta={theta:.3f}) at t={t:g}, dt={h:g}")
        dyno_old = max(dyno, 1e-300)
        Z = Z + dZ
        # the first update is the whole increment from Z = 0 and says nothing
        # about contraction, so a carried-over rate is not trusted there
        if (it > 1 and faccon * dyno <= controller.newton_tol) or dyno <= controller.newton_tol:
            converged = True
            break
    controller.faccon = faccon
    if not converged:
        raise NewtonDiverged(f"Newton did not converge in {controller.newton_max_iter} iterations "
                             f"at t={t:g}, dt={h:g}")
    if not np.all(np.isfinite(Z)):
        raise NewtonDiverged("non-finite Newton iterate")

    y1 = y0 + Z[2]
    err = _error_estimate(dae, t, y0, y1, Z, h, B0, lu_r, lam_r, controller, tableau, f0)
    return StepResult(y1, err, it, Z)


def _error_estimate(dae, t, y0, y1, Z, h, B0, lu_r, lam_r, controller, tableau, f0):
    mask = dae.diff_mask
    scale = controller.atol + controller.rtol * np.maximum(np.abs(y0), np.abs(y1))
    e = tableau.error_weights
    F2 = B0 @ ((e @ Z) / h)
    if f0 is None:
        f0 = dae.fun(t, y0)
    cont = lu_r.solve(f0 + F2)
    err = _rms(cont[mask], scale[mask])
    if err >= 1.0 and (controller.first or controller.rejected_last):
        f1 = dae.fun(t, y0 + cont)
        cont = lu_r.solve(f1 + F2)
        err = _rms(cont[mask], scale[mask])
    return err


def integrate_interval(dae, interval, y0, controller, tableau=RADAU5, max_rejections=50):
    """Advance by one accepted step on a mesh-motion interval.

    The first attempt uses the whole interval. A rejected or failed attempt
    shrinks the step; the interval is truncated so the mesh keeps its
    velocities (x^{n+1} = x^n + dt * xdot). The predicted next step is stored
    in ``controller.dt``.

    Returns (y_new, interval_used, records).
    """
    records = []
    dt = interval.dt
    t0 = interval.t_start
    for _ in range(max_rejections):
        if dt < interval.dt:
            interval = interval.truncate(t0 + dt)
        if hasattr(dae, "set_interval"):
            dae.set_interval(interval)
        controller.dt = dt
        try:
            res = radau_step(dae, t0, y0, dt, controller, tableau)
        except (NewtonDiverged, LinearSolveFailure) as exc:
            records.append(StepRecord(t0, dt, np.inf, False, controller.newton_max_iter, type(exc).__name__))
            controller.rejected_last = True
            dt = 0.5 * dt
            if dt < controller.dt_min:
                raise StepTooSmall(f"step size {dt:g} fell below dt_min after Newton failure") from exc
            continue
        accept, dt_next = control_step(controller, res.error, controller.err_prev)
        records.append(StepRecord(t0, dt, res.error, accept, res.newton_iters))
        if accept:
            controller.err_prev = max(res.error, 1e-10)
            controller.rejected_last = False
            controller.first = False
            controller.dt = dt_next
            return res.y, interval, records
        controller.rejected_last = True
        dt = min(dt_next, 0.9 * dt)
    raise StepTooSmall(f"more than {max_rejections} rejections at t={t0:g}")


def integrate_fixed(dae, t0, y0, t1, n_steps, tableau=RADAU5, rtol=1e-12, atol=1e-14):
    """Constant step integration (no error control), used for order checks."""
    ctrl = StepController(dt=(t1 - t0) / n_steps, rtol=rtol, atol=atol, newton_max_iter=50,
                          newton_tol=1e-3)
    y = np.asarray(y0, float)
    h = (t1 - t0) / n_steps
    for k in range(n_steps):
        y = radau_step(dae, t0 + k * h, y, h, ctrl, tableau).y
    return y
