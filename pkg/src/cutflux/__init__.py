"""Unfitted P1 interface solver with locally conservative flux recovery."""
from .errors import (CutFluxError, DegenerateCut, InconsistentPatch, InvalidArgument,
                     SingularSystem, SolverFailure, UnisolvenceFailure, UnsupportedGeometry)
from .mesh import Mesh, build_structured_mesh, node_edge_sign, node_patch, read_mesh, write_mesh
from .cutgeom import InterfacePolyline, classify, clip_triangle, interface_weights
from .quadrature import quadrature
from .cutfem import ProblemData, solve_primal
from .multipliers import build_multiplier
from .flux_rt import reconstruct_rt
from .flux_irt import reconstruct_irt
from .estimators import estimate

__version__ = "0.1.0"

__all__ = [
    "CutFluxError", "DegenerateCut", "InconsistentPatch", "InvalidArgument", "SingularSystem",
    "SolverFailure", "UnisolvenceFailure", "UnsupportedGeometry",
    "Mesh", "build_structured_mesh", "node_edge_sign", "node_patch", "read_mesh", "write_mesh",
    "InterfacePolyline", "classify", "clip_triangle", "interface_weights", "quadrature",
    "ProblemData", "solve_primal", "build_multiplier", "reconstruct_rt", "reconstruct_irt",
    "estimate",
]
