"""State-based peridynamics with embedded Volterra dislocations."""
from .constitutive import MaterialModel, PeridynamicBody
from .dislocation import Disc, DislocationSpec, HalfPlane, Rectangle
from .domain import BoxSpec, build_grid, build_neighbors
from .oracle import edge_fields, loop_fields, oracle_for, screw_fields
from .solver import ConvergenceError, DivergenceError, SolverParams, relax

__version__ = "0.1.0"

__all__ = [
    "MaterialModel", "PeridynamicBody", "Disc", "DislocationSpec", "HalfPlane", "Rectangle",
    "BoxSpec", "build_grid", "build_neighbors", "edge_fields", "loop_fields", "oracle_for",
    "screw_fields", "ConvergenceError", "DivergenceError", "SolverParams", "relax",
]
