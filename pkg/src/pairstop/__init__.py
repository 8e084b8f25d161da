"""Finite-element solver for the optimal liquidation boundary of a
mean-reverting spread with compound-Poisson jumps.

The package is organized bottom-up:

- ``model``: parameters, jump-size density, jump operator.
- ``fem``: Galerkin assembly and solve of the homogenized two-point problem,
  plus the explicit stability/error constants.
- ``boundary``: free-boundary search via the discrete smooth-fit function.
- ``verify``: inequality checks on computed solutions and an independent
  Monte Carlo / ODE cross-validation toolkit.
- ``cli``: command-line front end.
"""

from .model import JumpDensity, ModelParams, PiecewiseLinear, apply_jump_operator

__version__ = "0.1.0"

from .boundary import (
    BracketingError,
    ConvergenceReport,
    FreeBoundaryResult,
    convergence_study,
    existence_certificate,
    find_boundary,
)
from .fem import (
    BvpSolution,
    ErrorConstants,
    FemSystem,
    SingularSystemError,
    assemble,
    constants,
    solve,
    solve_structured,
)
from .verify import (
    ConditionReport,
    McEstimate,
    bias_allowance,
    check_conditions,
    default_dt,
    ode_oracle,
    simulate_stopped_value,
)

__all__ = [
    "JumpDensity",
    "ModelParams",
    "PiecewiseLinear",
    "apply_jump_operator",
    "BracketingError",
    "ConvergenceReport",
    "FreeBoundaryResult",
    "convergence_study",
    "existence_certificate",
    "find_boundary",
    "BvpSolution",
    "ErrorConstants",
    "FemSystem",
    "SingularSystemError",
    "assemble",
    "constants",
    "solve",
    "solve_structured",
    "ConditionReport",
    "McEstimate",
    "bias_allowance",
    "check_conditions",
    "default_dt",
    "ode_oracle",
    "simulate_stopped_value",
    "__version__",
]
