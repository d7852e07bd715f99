"""Optimal linear controllers for two-player, partially nested LQG problems.

Typical use::

    from declqg import random_instance, BlockDims, synthesize
    spec = random_instance(0, BlockDims(2, 2, 1, 1, 2, 2), T=5)
    result = synthesize(spec)
    result.gains.JHat0
"""

from .centralized import CentralizedSolution, centralized_cost, solve_centralized
from .controller import (
    CentralizedController,
    ControllerState,
    GainSchedule,
    TwoPlayerController,
    centralized_schedule,
    make_custom_linear_controller,
    two_player_schedule,
)
from .errors import (
    ConsistencyError,
    DeclqgError,
    DefinitenessError,
    DimensionError,
    EliminationSingular,
    HorizonExceeded,
    IllConditioned,
    ParseError,
    PivotFailure,
    SchemaError,
    SingularHessian,
    SingularInnovation,
    StructureError,
    ValidationError,
)
from .files import GainsFile, load_gains, save_gains
from .montecarlo import SimulationReport, empirical_beliefs, estimate_cost, sample_rollout
from .oracles import (
    NonConvergence,
    disturbance_feedback_optimum,
    evaluate_policy_cost,
    fixed_point_gains,
    pbp_perturbation_check,
)
from .problem import (
    BlockDims,
    ProblemSpec,
    ValidatedProblem,
    load_spec,
    random_instance,
    save_spec,
    validate,
)
from .synthesis import TwoPlayerGains, coupled_residuals, synthesize

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
