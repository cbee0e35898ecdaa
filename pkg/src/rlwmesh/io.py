"""Writers for snapshots (legacy VTK, CSV), logs and the run manifest."""
from __future__ import annotations

import csv
import json
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy

__all__ = ["write_vtk", "write_mesh_csv", "write_rows", "write_run", "write_table"]

_VTK_CELL = {1: 3, 2: 5}  # VTK_LINE, VTK_TRIANGLE


def write_vtk(path, mesh, point_data=None, title="rlwmesh snapshot"):
    """Legacy ASCII unstructured grid with optional scalar point data."""
    x = mesh.vertices
    pts = np.zeros((mesh.n_vertices, 3))
    pts[:, : mesh.dim] = x
    el = mesh.elements
    d1 = el.shape[1]
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in pts]
    lines.append(f"CELLS {len(el)} {len(el) * (d1 + 1)}")
    lines += [" ".join([str(d1)] + [str(i) for i in row]) for row in el]
    lines.append(f"CELL_TYPES {len(el)}")
    lines += [str(_VTK_CELL[mesh.dim])] * len(el)
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in np.asarray(values, float)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_mesh_csv(path, mesh, point_data=None):
    """One row per vertex: id, coordinates, then any point data columns."""
    cols = ["id"] + ["x", "y"][: mesh.dim]
    point_data = point_data or {}
    cols += list(point_data)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(mesh.n_vertices):
            row = [i] + [repr(float(c)) for c in mesh.vertices[i]]
            row += [repr(float(point_data[k][i])) for k in point_data]
            w.writerow(row)


def write_rows(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r[h] for h in header] if isinstance(r, dict) else list(r))


def write_table(path, rows):
    """Convergence or conservation table (list of dicts) as CSV."""
    if not rows:
        Path(path).write_text("")
        return
    write_rows(path, rows, list(rows[0]))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_run(result, problem, config, out_dir):
    """Full output directory of a run: snapshots, logs and a manifest."""
    from . import __version__

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = result.mesh
    write_vtk(out / "final.vtk", mesh, {"u": result.u, "v": result.v})
    write_mesh_csv(out / "final.csv", mesh, {"u": result.u})
    for k, (ts, (t, x, u)) in enumerate(sorted(result.snapshots.items())):
        m = mesh.with_vertices(x)
        write_vtk(out / f"snapshot_{k:03d}.vtk", m, {"u": u}, title=f"t = {t:.10g}")
        write_mesh_csv(out / f"snapshot_{k:03d}.csv", m, {"u": u})
    if result.step_log:
        write_rows(out / "steps.csv", result.step_log, list(result.step_log[0]))
    write_rows(out / "conservation.csv", result.conservation, ["t", "E1", "E2", "dE1", "dE2"])
    if result.errors:
        write_rows(out / "errors.csv", result.errors, ["t", "L2", "Linf"])
    manifest = dict(
        problem=problem.name,
        problem_parameters=dict(dim=problem.dim, alpha=problem.alpha, beta=problem.beta,
                                gamma=problem.gamma, delta=problem.delta, mu=problem.mu, p=problem.p,
                                domain=list(problem.domain), T=problem.T, params=problem.params),
        config=asdict(config),
        summary=dict(t=result.t, n_steps=result.n_steps, n_rejected=result.n_rejected,
                     L2=result.L2, Linf=result.Linf, dE1=result.dE1, dE2=result.dE2,
                     min_volume=result.min_volume, nonsingular_failures=result.nonsingular_failures,
                     wall_seconds=result.wall),
        versions=dict(rlwmesh=__version__, python=sys.version.split()[0], numpy=np.__version__,
                      scipy=scipy.__version__, platform=platform.platform()),
    )
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2))
    return out
