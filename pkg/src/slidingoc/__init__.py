"""Optimal control of hybrid dynamical systems with sliding modes.

Forward integration of switched ODE / index-2 DAE phases with the 3-stage
Radau IIA scheme, discrete adjoint sweeps with jumps at switching times,
reduced gradients over piecewise-constant controls, and an SQP driver.
"""

__version__ = "0.1.0"

from .adjoint import (
    AdjointRecord,
    apply_jump,
    backward_step_dae,
    backward_step_ode,
    backward_sweep,
    jump_pi_discrete,
    jump_pi_simple,
    terminal_conditions,
)
from .forward import (
    IntegratorOptions,
    StepRecord,
    TrajectoryRecord,
    TransitionKind,
    TransitionRecord,
    hermite_interpolant,
    integrate,
    locate_switch,
    step_dae,
    step_ode,
)
from .gradient import ReducedGradient, assemble, fd_gradient, fd_oracle
from .model import (
    ControlGrid,
    HybridModel,
    Phase,
    consistent_z,
    is_attractive,
    sliding_rhs,
)
from .nlp import Nlp, SqpOptions, bfgs_powell_update, build_endpoint_nlp, qp_step, solve
from .problems import ProblemSpec, get_problem, problem_names
from .tableau import Tableau, adjoint_tableau, radau_iia

__all__ = [
    "__version__",
    "AdjointRecord",
    "ControlGrid",
    "HybridModel",
    "IntegratorOptions",
    "Nlp",
    "Phase",
    "ProblemSpec",
    "ReducedGradient",
    "SqpOptions",
    "StepRecord",
    "Tableau",
    "TrajectoryRecord",
    "TransitionKind",
    "TransitionRecord",
    "adjoint_tableau",
    "apply_jump",
    "assemble",
    "backward_step_dae",
    "backward_step_ode",
    "backward_sweep",
    "bfgs_powell_update",
    "build_endpoint_nlp",
    "consistent_z",
    "fd_gradient",
    "fd_oracle",
    "get_problem",
    "hermite_interpolant",
    "integrate",
    "is_attractive",
    "jump_pi_discrete",
    "jump_pi_simple",
    "locate_switch",
    "problem_names",
    "qp_step",
    "radau_iia",
    "sliding_rhs",
    "solve",
    "step_dae",
    "step_ode",
    "terminal_conditions",
]
