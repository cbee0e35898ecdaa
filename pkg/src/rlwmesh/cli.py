"""Command line interface: ``rlwmesh {run,study,conserve,reference}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .driver import (RunConfig, reference_solution, run_conservation_sweep, run_convergence_study,
                     run_simulation)
from .io import write_table
from .problems import catalog

_DEFAULT_N = {
    ("study", 1): [20, 40, 80, 160, 320, 640],
    ("study", 2): [100, 400, 1600, 6400],
    ("conserve", 1): [100, 200, 400, 800],
    ("conserve", 2): [400, 1600, 6400],
}


def _parser():
    p = argparse.ArgumentParser(prog="rlwmesh", description="Moving mesh finite element solver for RLW/MRLW.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("run", "single simulation"), ("study", "convergence table"),
                        ("conserve", "conservation sweep"), ("reference", "fine fixed-mesh reference")):
        s = sub.add_parser(verb, help=help_)
        s.add_argument("--config", type=Path, help="INI configuration file")
        s.add_argument("--problem", help="catalog problem name (overrides the config)")
        s.add_argument("--n", type=int, nargs="+", help="element count(s)")
        g = s.add_mutually_exclusive_group()
        g.add_argument("--moving", dest="moving", action="store_true", default=None)
        g.add_argument("--fixed", dest="moving", action="store_false")
        s.add_argument("--T", type=float, help="final time")
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _setup(args):
    if args.config:
        problem, cfg = load_config(args.config)
    else:
        problem, cfg = None, RunConfig()
    if args.problem:
        problem = catalog(args.problem)
    if problem is None:
        raise SystemExit("give --problem or a config file with a [problem] section")
    if args.moving is not None:
        cfg = replace(cfg, moving=args.moving)
    if args.T is not None:
        cfg = replace(cfg, T=args.T)
    out = args.out or (Path(cfg.out_dir) if cfg.out_dir else None)
    return problem, cfg, out


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    problem, cfg, out = _setup(args)

    if args.verb == "run":
        n = args.n[0] if args.n else cfg.n
        res = run_simulation(problem, replace(cfg, n=n, out_dir=str(out) if out else None))
        print(f"{problem.name} N={n} {'moving' if res.moving else 'fixed'}: t={res.t:.6g} "
              f"steps={res.n_steps} rejected={res.n_rejected}")
        if res.L2 == res.L2:
            print(f"L2={res.L2:.4e} Linf={res.Linf:.4e}")
        print(f"dE1={res.dE1:.4e} dE2={res.dE2:.4e}")
        return 0

    ns = args.n or _DEFAULT_N.get((args.verb, problem.dim), [cfg.n])
    if args.verb == "study":
        rows = run_convergence_study(problem, ns, moving=cfg.moving, config=cfg)
        print(f"{'N':>7} {'L2':>10} {'order':>6} {'Linf':>10} {'order':>6}")
        for r in rows:
            print(f"{r['N']:7d} {r['L2']:10.3e} {r['L2_order']:6.2f} {r['Linf']:10.3e} {r['Linf_order']:6.2f}")
        name = f"study_{problem.name}_{'moving' if cfg.moving else 'fixed'}.csv"
    elif args.verb == "conserve":
        rows = run_conservation_sweep(problem, ns, moving=cfg.moving, config=cfg)
        print(f"{'N':>7} {'dE1(T)':>11} {'dE2(T)':>11}")
        for r in rows:
            print(f"{r['N']:7d} {r['dE1']:11.3e} {r['dE2']:11.3e}")
        name = f"conserve_{problem.name}_{'moving' if cfg.moving else 'fixed'}.csv"
    else:
        n = args.n[0] if args.n else 6000
        times = cfg.snapshot_times or (problem.T,)
        ref = reference_solution(problem, n=n, times=times, cache_dir=out, config=cfg)
        rows = [dict(t=t, n_vertices=len(x), u_max=float(u.max()), u_min=float(u.min()))
                for t, (x, u) in sorted(ref.items())]
        for r in rows:
            print(f"t={r['t']:.6g} u_max={r['u_max']:.6e} u_min={r['u_min']:.6e}")
        name = f"reference_{problem.name}_N{n}.csv"
    if out:
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / name, rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
