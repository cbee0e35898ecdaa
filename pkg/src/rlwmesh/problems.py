"""Catalog of RLW / MRLW test problems.

Every problem is posed as

    u_t + a . grad u + u^p (c . grad u) - mu Laplace(u_t) = 0,

with a = (alpha, beta), c = (gamma, delta); p = 1 is RLW and p = 2 is MRLW.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NoExactSolution, UnknownProblem

__all__ = ["ProblemSpec", "catalog", "exact_solution", "CATALOG", "sech2", "custom_problem"]


def sech2(z):
    """sech(z)^2 without overflow for large |z|."""
    s = np.exp(-2.0 * np.abs(z))
    return 4.0 * s / (1.0 + s) ** 2


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dim: int
    alpha: float
    beta: float
    gamma: float
    delta: float
    mu: float
    p: int
    domain: tuple
    T: float
    u0: Optional[Callable] = field(default=None, repr=False)
    g: Optional[Callable] = field(default=None, repr=False)
    exact: Optional[Callable] = field(default=None, repr=False)
    u0_table: Optional[np.ndarray] = field(default=None, repr=False)
    params: dict = field(default_factory=dict)
    tau: Optional[float] = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if abs(self.gamma) + abs(self.delta) == 0:
            raise ValueError("need |gamma| + |delta| > 0")
        if self.dim == 1 and (self.beta != 0 or self.delta != 0):
            raise ValueError("1D problems have beta = delta = 0")
        if self.p not in (1, 2):
            raise ValueError("nonlinearity power must be 1 (RLW) or 2 (MRLW)")

    @property
    def convection(self):
        return np.array([self.alpha, self.beta][: self.dim])

    @property
    def nonlinear(self):
        return np.array([self.gamma, self.delta][: self.dim])

    @property
    def has_exact(self):
        return self.exact is not None

    @property
    def mesh_tau(self):
        if self.tau is not None:
            return self.tau
        return 1e-4 if self.dim == 1 else 1e-2

    def boundary_values(self, x, t):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        if self.g is None:
            return np.zeros(x.shape[0])
        return np.asarray(self.g(x, t), dtype=float) * np.ones(x.shape[0])

    def initial_values(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        if self.u0 is None:
            if self.u0_table is None:
                raise ValueError(f"problem {self.name!r} has no initial condition")
            return np.array(self.u0_table, dtype=float)
        return np.asarray(self.u0(x), dtype=float) * np.ones(x.shape[0])

    def with_params(self, **kw):
        return replace(self, **kw)


def exact_solution(spec, x, t):
    if spec.exact is None:
        raise NoExactSolution(f"problem {spec.name!r} has no closed-form solution")
    return spec.exact(np.asarray(x, dtype=float).reshape(-1, spec.dim), t)


def _soliton1d(gamma=2.0, mu=1.0, c=0.1, x0=40.0, T=20.0):
    # amplitude 3c/gamma travelling at v = 1 + c
    v = 1.0 + c
    k = 0.5 * np.sqrt(c / (mu * (1.0 + c)))
    amp = 3.0 * c / gamma

    def exact(x, t):
        return amp * sech2(k * (x[:, 0] - v * t - x0))

    return ProblemSpec(
        "soliton1d", 1, 1.0, 0.0, gamma, 0.0, mu, 1, (-100.0, 150.0), T,
        u0=lambda x: exact(x, 0.0), g=exact, exact=exact,
        params=dict(c=c, x0=x0, v=v, k=k, amplitude=amp),
    )


def _two_soliton1d(gamma=1.0, mu=1.0, c1=0.2, c2=0.1, x1=-177.0, x2=-147.0, T=400.0, printed_k=False):
    cs, xs = (c1, c2), (x1, x2)
    vs = [1.0 + gamma * c for c in cs]
    if printed_k:
        ks = [0.5 * np.sqrt(gamma * v / (mu * (gamma * v + 1.0))) for v in vs]
    else:
        ks = [0.5 * np.sqrt(gamma * c / (mu * (gamma * c + 1.0))) for c in cs]

    def u0(x):
        return sum(3.0 * c * sech2(k * (x[:, 0] - xj)) for c, k, xj in zip(cs, ks, xs))

    return ProblemSpec(
        "two_soliton1d", 1, 1.0, 0.0, gamma, 0.0, mu, 1, (-400.0, 500.0), T,
        u0=u0, g=lambda x, t: 0.0,
        params=dict(c=cs, x=xs, v=vs, k=ks, amplitudes=[3.0 * c for c in cs]),
    )


def _undular_bore1d(d=2.0, gamma=1.5, mu=1.0 / 6.0, u0=0.1, x0=0.0, T=250.0):
    a, b = -60.0, 300.0

    def init(x):
        return 0.5 * u0 * (1.0 - np.tanh((x[:, 0] - x0) / d))

    def g(x, t):
        return np.where(x[:, 0] < 0.5 * (a + b), u0, 0.0)

    return ProblemSpec(
        "undular_bore1d", 1, 1.0, 0.0, gamma, 0.0, mu, 1, (a, b), T,
        u0=init, g=g, params=dict(d=d, u0=u0, x0=x0),
    )


def _maxwellian_mrlw1d(mu=1.0, gamma=6.0, T=10.0):
    return ProblemSpec(
        "maxwellian_mrlw1d", 1, 1.0, 0.0, gamma, 0.0, mu, 2, (0.0, 100.0), T,
        u0=lambda x: np.exp(-((x[:, 0] - 40.0) ** 2)), g=lambda x, t: 0.0,
    )


def _two_wave2d(c1=0.2, c2=0.4, x1=35.0, y1=35.0, x2=55.0, y2=55.0, T=15.0):
    cs = (c1, c2)
    shifts = (x1 + y1, x2 + y2)
    ks = [0.5 * np.sqrt(c / (2.0 * (1.0 + c))) for c in cs]
    vs = [2.0 * (1.0 + c) for c in cs]

    def exact(x, t):
        s = x[:, 0] + x[:, 1]
        return sum(3.0 * c * sech2(k * (s - v * t - sh)) for c, k, v, sh in zip(cs, ks, vs, shifts))

    return ProblemSpec(
        "two_wave2d", 2, 1.0, 1.0, 1.0, 1.0, 1.0, 1, (0.0, 120.0, 0.0, 120.0), T,
        u0=lambda x: exact(x, 0.0), g=exact, exact=exact,
        params=dict(c=cs, k=ks, v=vs, shifts=shifts),
    )


def _undular_bore2d(d=2.0, gamma=1.5, mu=1.0 / 6.0, u0=0.1, x0=0.0, y0=0.0, T=250.0):
    def init(x):
        r2 = (x[:, 0] - x0) ** 2 + (x[:, 1] - y0) ** 2
        return 0.5 * u0 * (1.0 - np.tanh(r2 - d * d))

    return ProblemSpec(
        "undular_bore2d", 2, 1.0, 1.0, gamma, gamma, mu, 1, (-60.0, 300.0, -60.0, 300.0), T,
        u0=init, g=lambda x, t: 0.0, params=dict(d=d, u0=u0),
    )


def _maxwellian_mrlw2d(mu=1.0, gamma=6.0, T=10.0):
    return ProblemSpec(
        "maxwellian_mrlw2d", 2, 1.0, 1.0, gamma, gamma, mu, 2, (0.0, 100.0, 0.0, 100.0), T,
        u0=lambda x: np.exp(-((x[:, 0] - 40.0) ** 2 + (x[:, 1] - 40.0) ** 2)), g=lambda x, t: 0.0,
    )


CATALOG = {
    "soliton1d": _soliton1d,
    "two_soliton1d": _two_soliton1d,
    "undular_bore1d": _undular_bore1d,
    "maxwellian_mrlw1d": _maxwellian_mrlw1d,
    "two_wave2d": _two_wave2d,
    "undular_bore2d": _undular_bore2d,
    "maxwellian_mrlw2d": _maxwellian_mrlw2d,
}


def catalog(name, **overrides):
    """Problem by name; keyword overrides select variants (e.g. ``d=5`` or ``mu=0.5``)."""
    try:
        factory = CATALOG[name]
    except KeyError:
        raise UnknownProblem(name) from None
    return factory(**overrides)


def custom_problem(dim, domain, T, alpha=1.0, beta=0.0, gamma=1.0, delta=0.0, mu=1.0, p=1,
                   u0_values=None, boundary_value=0.0, name="custom"):
    """User problem with tabulated initial data on the initial mesh and constant Dirichlet data."""
    return ProblemSpec(
        name, dim, alpha, beta, gamma, delta, mu, p, tuple(domain), T,
        g=lambda x, t: boundary_value, u0_table=None if u0_values is None else np.asarray(u0_values),
    )
