"""Rotating quasi-periodic solutions of x'' + grad V(x) = 0 with x(t + T) = Q x(t)."""

from .action import action, gradient, residual, shift_average
from .potential import PotentialSpec, audit_conditions, builtin
from .solver import SolverConfig, deformation_flow, refine, seed_starts, solve_multiplicity
from .spectral import SymmetryData, count_pT, rotation_matrix, simultaneous_diagonalize
from .trajectory import TrajectoryCoeffs, evaluate, orbit_distance, shift

__version__ = "0.1.0"

__all__ = [
    "PotentialSpec",
    "SolverConfig",
    "SymmetryData",
    "TrajectoryCoeffs",
    "action",
    "audit_conditions",
    "builtin",
    "count_pT",
    "deformation_flow",
    "evaluate",
    "gradient",
    "orbit_distance",
    "refine",
    "residual",
    "rotation_matrix",
    "seed_starts",
    "shift",
    "shift_average",
    "simultaneous_diagonalize",
    "solve_multiplicity",
]
