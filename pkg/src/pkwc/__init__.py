"""Time-discretised solver for the pseudo-parabolic KWC phase-field system.

The scheme alternates a convex theta-step (regularised total variation with an
eta-dependent weight) and an eta-step solved as a Picard fixed point of convex
minimisations. Fields live on a uniform cell-centred grid with homogeneous
Neumann boundary conditions.
"""

from .errors import (ConfigurationError, GridMismatchError, ModelError, NumericalError,
                     OracleFailure, PKWCError, PreconditionError, RunAborted, SolverFailure)
from .grid import FaceField, Grid, ScalarField, div, grad, make_grid, neumann_laplacian
from .model import ModelFns, SchemeParams, default_model, polynomial_model
from .problem import Problem
from .stepper import ForcingSequence, TrajectoryState, max_stable_tau, run, step

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "GridMismatchError", "ModelError", "NumericalError", "OracleFailure",
    "PKWCError", "PreconditionError", "RunAborted", "SolverFailure",
    "FaceField", "Grid", "ScalarField", "div", "grad", "make_grid", "neumann_laplacian",
    "ModelFns", "SchemeParams", "default_model", "polynomial_model",
    "Problem", "ForcingSequence", "TrajectoryState", "max_stable_tau", "run", "step",
]
