"""Preconditioned semismooth Newton solver for a Cahn-Hilliard Navier-Stokes
two-phase flow model with a Moreau-Yosida relaxed double-obstacle potential."""

from .errors import IndefiniteOperatorError, NonConvergenceError, ParseError, SingularMatrixError
from .mesh import DofMap, Mesh2D, build_dofmap, build_rect_mesh
from .physics import BENCHMARK1, BENCHMARK2, PhysParams

__all__ = ["BENCHMARK1", "BENCHMARK2", "PhysParams", "Mesh2D", "DofMap", "build_rect_mesh",
           "build_dofmap", "NonConvergenceError", "IndefiniteOperatorError",
           "SingularMatrixError", "ParseError"]
