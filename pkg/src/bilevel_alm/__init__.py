"""Sensitivity-based augmented Lagrangian solver for bilevel programs.

The upper-level problem is solved in x alone: each evaluation solves the
lower level, differentiates its KKT system to get dy/dx, and feeds total
gradients to a projected L-BFGS inner solver inside a PHR augmented
Lagrangian loop.
"""

from .alm import AlmConfig, KktResiduals, MultistartResult, SolveReport, multistart, run
from .autodiff import DifferentiableFunction, evaluate
from .benchmarks import BenchmarkEntry
from .errors import (BilevelError, DegenerateError, EvaluationError, InputError, LowerSolveError,
                     SingularSystemError, SolverFailure, UnknownProblemError)
from .landscape import scan
from .lower import LowerSolution, LowerSolverConfig, solve_lower
from .problem import BilevelProblem, RegularizationConfig, regularize_linear_lower, validate
from .sensitivity import sensitivities, total_gradients
from .stationarity import certify

__version__ = "0.1.0"

__all__ = [
    "AlmConfig", "KktResiduals", "MultistartResult", "SolveReport", "multistart", "run",
    "DifferentiableFunction", "evaluate", "BenchmarkEntry",
    "BilevelError", "DegenerateError", "EvaluationError", "InputError", "LowerSolveError",
    "SingularSystemError", "SolverFailure", "UnknownProblemError",
    "scan", "LowerSolution", "LowerSolverConfig", "solve_lower",
    "BilevelProblem", "RegularizationConfig", "regularize_linear_lower", "validate",
    "sensitivities", "total_gradients", "certify",
]
