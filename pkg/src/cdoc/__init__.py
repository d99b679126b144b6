"""Cost-desensitized optimal control.

Uncertain parameters are promoted to constant states, the co-state equations
are appended to the dynamics, and the parameter co-states (the sensitivity of
the cost-to-go to the parameters) are penalised in the running cost.  The
resulting two-point boundary value problem is transcribed by collocation and
solved with an augmented Lagrangian method.
"""

__version__ = "0.1.0"

from .augment import AugmentedProblem, WeightSchedule, build_augmented, sensitivity_cost
from .core import (
    ControlSignal,
    DimensionError,
    GridMismatch,
    IntegrationDiverged,
    ProblemDef,
    TimeGrid,
    Trajectory,
    cost_to_go,
    eval_cost,
    integrate,
    validate_jacobians,
)
from .adjoint import CostateTrajectory, cx_integral_form, fd_cost_gradient, propagate_costates, verify_theorem1
from .stm import propagate_stm, stm_between, verify_costate_stm_relation
from .solver import DesensitizedSolution, SolverOptions, solve, solve_cdoc, transcribe
from .mc import DispersionStats, TradeoffCurve, evaluate_dispersion, sample_parameters, sweep_weights
from .problems import get_problem, scalar_lqr, zermelo

__all__ = [
    "AugmentedProblem", "WeightSchedule", "build_augmented", "sensitivity_cost",
    "ControlSignal", "DimensionError", "GridMismatch", "IntegrationDiverged", "ProblemDef",
    "TimeGrid", "Trajectory", "cost_to_go", "eval_cost", "integrate", "validate_jacobians",
    "CostateTrajectory", "cx_integral_form", "fd_cost_gradient", "propagate_costates",
    "verify_theorem1", "propagate_stm", "stm_between", "verify_costate_stm_relation",
    "DesensitizedSolution", "SolverOptions", "solve", "solve_cdoc", "transcribe",
    "DispersionStats", "TradeoffCurve", "evaluate_dispersion", "sample_parameters",
    "sweep_weights", "get_problem", "scalar_lqr", "zermelo",
]
