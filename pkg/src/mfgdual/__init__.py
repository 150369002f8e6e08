"""Variational solver and verification suite for first-order mean field
games with local coupling.

The package solves the pair of convex problems in duality behind the MFG
system (optimal control of a backward Hamilton-Jacobi equation versus
optimal control of a continuity equation), certifies optimality through
the duality gap, verifies the weak-solution conditions on the computed
pair, and uses the solution to build approximate Nash equilibria for
N-player deterministic games.
"""

from mfgdual.model import (
    PowerCoupling,
    PowerHamiltonian,
    ProblemData,
    ValidationReport,
    validate,
)
from mfgdual.grid import SpaceTimeGrid
from mfgdual.solver import SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "PowerCoupling",
    "PowerHamiltonian",
    "ProblemData",
    "SolverConfig",
    "SpaceTimeGrid",
    "ValidationReport",
    "solve",
    "validate",
]
