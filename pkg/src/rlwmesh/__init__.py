"""Adaptive moving mesh finite element solver for the RLW and MRLW equations in 1D and 2D."""

__version__ = "0.1.0"

from .driver import RunConfig, Simulation, run_conservation_sweep, run_convergence_study, run_simulation
from .mesh import SimplicialMesh, interval_mesh, rectangle_mesh
from .problems import ProblemSpec, catalog

__all__ = [
    "RunConfig",
    "Simulation",
    "run_simulation",
    "run_convergence_study",
    "run_conservation_sweep",
    "SimplicialMesh",
    "interval_mesh",
    "rectangle_mesh",
    "ProblemSpec",
    "catalog",
]
