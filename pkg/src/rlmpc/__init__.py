"""Robust learning MPC: convex safe sets, Q-functions and safe policies
learned iteratively from closed-loop data of a constrained linear system
under bounded additive disturbance."""

from .polytope import (Polytope, affine_image, box, convex_hull,
                       minkowski_sum, scale)
from .solver import ConvexProgram, SolveResult, SolveStatus
from .system import (StageCost, SynthesisError, SystemModel, TerminalPair,
                     riccati_gain, stage_cost_epigraph, synthesize_terminal_pair,
                     verify_terminal_pair)
from .safe_set import (NotInSafeSetError, SafeSet, ScenarioTree, TreeDataError,
                       compute_cost_to_go, extend, initial_safe_set, prune)
from .lmpc import (AllInfeasibleError, FeedbackPlan, ScenarioPolicy,
                   build_ftocp, lmpc_step, solve_ftocp,
                   solve_long_horizon_feedback)
from .roa import (RoaQuery, RoaResult, approximate_roa, extreme_initial_state,
                  select_initial_condition, uniform_directions)
from .simulation import (DisturbanceSampler, IterationRecord, LearningConfig,
                         LearningResult, MonteCarloResult, monte_carlo,
                         run_iteration, run_learning_loop, seed_iteration)

__all__ = [
    "Polytope", "affine_image", "box", "convex_hull", "minkowski_sum",
    "scale",
    "ConvexProgram", "SolveResult", "SolveStatus",
    "StageCost", "SynthesisError", "SystemModel", "TerminalPair",
    "riccati_gain", "stage_cost_epigraph", "synthesize_terminal_pair",
    "verify_terminal_pair",
    "NotInSafeSetError", "SafeSet", "ScenarioTree", "TreeDataError",
    "compute_cost_to_go", "extend", "initial_safe_set", "prune",
    "AllInfeasibleError", "FeedbackPlan", "ScenarioPolicy", "build_ftocp",
    "lmpc_step", "solve_ftocp", "solve_long_horizon_feedback",
    "RoaQuery", "RoaResult", "approximate_roa", "extreme_initial_state",
    "select_initial_condition", "uniform_directions",
    "DisturbanceSampler", "IterationRecord", "LearningConfig",
    "LearningResult", "MonteCarloResult", "monte_carlo", "run_iteration",
    "run_learning_loop", "seed_iteration",
]

__version__ = "0.1.0"
