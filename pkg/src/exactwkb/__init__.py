"""Exact-WKB transition probabilities for adiabatic discrete-level Hamiltonians."""

from .analytic import (PathPolyline, QuadratureResult, count_zeros, find_root,
                       integrate_path, residue_at)
from .connection import (ConnectionStep, TransferMatrix, TransitionReport, ddp_probability,
                         exp_prefactor, gamma_coefficient, gddp_probability,
                         perturbative_amplitude, step_matrix, theta_at_tp, transfer_product,
                         transition_probability_ewkb)
from .errors import (BranchError, DegenerateGraphError, ExactWKBError, MethodPreconditionError,
                     ModelValidationError, QuadratureError, RootFindingError, SolverError,
                     WindowNotConvergedError)
from .integrator import (SolverConfig, Trajectory, integrate, numeric_transition_probability,
                         project_adiabatic)
from .model import (ModelSpec, builtin, coupling_g, delta_e, eigen_continued, evaluate_h,
                    load_model)
from .stokes import (StokesGraph, StokesLine, TurningPoint, build_graph,
                     find_all_turning_points, find_turning_points, initial_directions,
                     trace_line)

__version__ = "0.1.0"

__all__ = [
    "BranchError", "ConnectionStep", "DegenerateGraphError", "ExactWKBError",
    "MethodPreconditionError", "ModelSpec", "ModelValidationError", "PathPolyline",
    "QuadratureError", "QuadratureResult", "RootFindingError", "SolverConfig", "SolverError",
    "StokesGraph", "StokesLine", "Trajectory", "TransferMatrix", "TransitionReport",
    "TurningPoint", "WindowNotConvergedError", "build_graph", "builtin", "count_zeros",
    "coupling_g", "ddp_probability", "delta_e", "eigen_continued", "evaluate_h",
    "exp_prefactor", "find_all_turning_points", "find_root", "find_turning_points",
    "gamma_coefficient", "gddp_probability", "initial_directions", "integrate",
    "integrate_path", "load_model", "numeric_transition_probability",
    "perturbative_amplitude", "project_adiabatic", "residue_at", "step_matrix",
    "theta_at_tp", "trace_line", "transfer_product", "transition_probability_ewkb",
]
