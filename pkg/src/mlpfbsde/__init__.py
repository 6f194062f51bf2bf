"""Multilevel Picard approximations for decoupled forward-backward SDEs."""

from .cost import (CostCounters, CostModel, CostReport, cost_closed_bound, cost_recursion_u,
                   cost_total, m_schedule)
from .errors import (BudgetExceededError, ConfigError, DivergenceError, MissingExactSolutionError,
                     MlpError, UnsupportedProblemError)
from .euler import coupled_pair, euler_endpoint, global_grid_times
from .metrics import (ErrorEstimate, HolderSeminormConfig, empirical_holder_seminorm,
                      estimate_path_error, estimate_pointwise_error, fit_rate)
from .mlp import MlpConfig, evaluate_u
from .multigrid import PathEstimate, ceil_grid, floor_grid, interpolate_y, simulate_y_path
from .oracle import OracleGrid, make_grid, picard_reference, transition_moments
from .problem import Problem, ProblemConstants, exact_solution, make_builtin, validate_constants
from .rng import RealizationContext, brownian_at, derive_key, uniform_time

__version__ = "0.1.0"
