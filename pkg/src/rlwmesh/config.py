"""INI-style run configuration.

Sections and keys (all optional)::

    [problem]
    name = soliton1d          ; catalog entry, or "custom"
    T = 20                    ; overrides the catalog final time
    ; catalog parameter overrides, e.g. d = 5 or mu = 0.5
    ; for name = custom: dim, domain, alpha, beta, gamma, delta, mu, p,
    ;                    boundary_value, u0_file
    ; u0_file holds either one value per initial vertex (interior vertices
    ; first) or rows of sample coordinates followed by u, interpolated linearly

    [mesh]
    n = 200
    pattern = cross           ; 2D only: cross (4 triangles per square) or diagonal

    [mover]
    moving = true
    tau = 1e-4
    method = bdf              ; bdf or euler
    mmpde_substep_safety = 0.4
    alpha_exponent =          ; blank: 2/(d+4)
    initial_adapt_iters = 5
    boundary = sliding        ; sliding (corners fixed) or fixed

    [integrator]
    rtol = 1e-7
    atol = 1e-9
    dt0 = 1e-2
    dt_min = 1e-10
    dt_max = inf
    newton_max_iter = 7

    [output]
    out = results/run1
    snapshot_times = 0, 5, 10
    checkpoint_every = 0
"""
from __future__ import annotations

import configparser
from dataclasses import fields

import numpy as np
from scipy.interpolate import LinearNDInterpolator

from .driver import RunConfig
from .problems import catalog, custom_problem

__all__ = ["load_config", "parse_config", "problem_from_section"]

_MOVER_KEYS = {"tau": "tau", "method": "mover_method", "mmpde_substep_safety": "mmpde_substep_safety",
               "alpha_exponent": "alpha_exponent", "initial_adapt_iters": "initial_adapt_iters",
               "initial_adapt_time": "initial_adapt_time", "boundary": "mesh_boundary"}
_INTEGRATOR_KEYS = ("rtol", "atol", "dt0", "dt_min", "dt_max", "newton_max_iter")
_PROBLEM_RESERVED = {"name", "t"}


def _number(text):
    text = text.strip()
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def _floats(text):
    return [float(s) for s in text.replace(",", " ").split()]


def _attach_initial_data(problem, table):
    if table.ndim == 1:
        return problem.with_params(u0_table=table)
    if table.shape[1] != problem.dim + 1:
        raise ValueError(f"u0_file needs {problem.dim + 1} columns (coordinates then u), got {table.shape[1]}")
    pts, vals = table[:, :-1], table[:, -1]
    if problem.dim == 1:
        order = np.argsort(pts[:, 0])
        u0 = lambda x: np.interp(x[:, 0], pts[order, 0], vals[order])
    else:
        interp = LinearNDInterpolator(pts, vals, fill_value=0.0)
        u0 = lambda x: interp(x)
    return problem.with_params(u0=u0)


def problem_from_section(sec):
    name = sec.get("name", "soliton1d")
    if name == "custom":
        dim = int(sec.get("dim", "1"))
        domain = _floats(sec["domain"])
        kw = {k: float(sec[k]) for k in ("alpha", "beta", "gamma", "delta", "mu") if k in sec}
        p = custom_problem(dim, domain, float(sec.get("t", "1")), p=int(sec.get("p", "1")),
                           boundary_value=float(sec.get("boundary_value", "0")), **kw)
        if "u0_file" in sec:
            p = _attach_initial_data(p, np.loadtxt(sec["u0_file"], ndmin=1))
        return p
    overrides = {k: _number(v) for k, v in sec.items() if k not in _PROBLEM_RESERVED}
    if "t" in sec:
        overrides["T"] = float(sec["t"])
    return catalog(name, **overrides)


def parse_config(text):
    """Return (ProblemSpec, RunConfig) from INI text."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    prob = problem_from_section(cp["problem"] if cp.has_section("problem") else {})
    kw = {}
    if cp.has_section("mesh"):
        m = cp["mesh"]
        if "n" in m:
            kw["n"] = m.getint("n")
        if "pattern" in m:
            kw["pattern"] = m["pattern"]
    if cp.has_section("mover"):
        m = cp["mover"]
        if "moving" in m:
            kw["moving"] = m.getboolean("moving")
        for key, attr in _MOVER_KEYS.items():
            if key in m:
                kw[attr] = m[key].strip() if key in ("method", "boundary") else _number(m[key])
    if cp.has_section("integrator"):
        m = cp["integrator"]
        for key in _INTEGRATOR_KEYS:
            if key in m:
                kw[key] = _number(m[key])
    if cp.has_section("output"):
        m = cp["output"]
        if "out" in m:
            kw["out_dir"] = m["out"]
        if "snapshot_times" in m:
            kw["snapshot_times"] = tuple(_floats(m["snapshot_times"]))
        if "checkpoint_every" in m:
            kw["checkpoint_every"] = m.getint("checkpoint_every")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(kw) - known
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    return prob, RunConfig(**kw)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
