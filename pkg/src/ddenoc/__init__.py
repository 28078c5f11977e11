"""Numerical optimal control of delay differential equations.

Delays that depend on the manipulated inputs are linearized around the
current time, the resulting implicit system is transcribed with implicit
Euler into a sparse nonlinear program, and optimized inputs are validated
by replaying them through a method-of-steps simulator of the original
delay equations.  The flagship model is a molten-salt fission reactor with
circulation delays.
"""

from .core import (
    DdeModel,
    DelayChannel,
    HistoryFunction,
    HistoryUnderflowError,
    JacobianReport,
    ModelDomainError,
    ModelEvaluationError,
    OcpSpec,
    StageCost,
    StepFailureError,
    Trajectory,
    ZohSchedule,
    eval_memory_state,
    tau_max,
    validate_jacobians,
)
from .msr import MsrParams, MsrState, msr_build, msr_critical_reactivity, msr_steady_state
from .stability import (
    RootSet,
    SteadyLinearization,
    char_fn_approx,
    char_fn_dde,
    find_roots_approx,
    find_roots_dde,
    linearize_at_steady_state,
)

__version__ = "0.1.0"

__all__ = [
    "DdeModel",
    "DelayChannel",
    "HistoryFunction",
    "HistoryUnderflowError",
    "JacobianReport",
    "ModelDomainError",
    "ModelEvaluationError",
    "OcpSpec",
    "StageCost",
    "StepFailureError",
    "Trajectory",
    "ZohSchedule",
    "eval_memory_state",
    "tau_max",
    "validate_jacobians",
    "MsrParams",
    "MsrState",
    "msr_build",
    "msr_critical_reactivity",
    "msr_steady_state",
    "RootSet",
    "SteadyLinearization",
    "char_fn_approx",
    "char_fn_dde",
    "find_roots_approx",
    "find_roots_dde",
    "linearize_at_steady_state",
    "__version__",
]
