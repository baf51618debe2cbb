"""Numerical toolkit for discrete multidimensional screening problems.

A monopolist prices goods for a distribution of buyer types; this package
samples such problems, transforms between price schedules and indirect
utilities, verifies the structural conditions (B0 through B3u) that govern
convexity of the feasible utility class, reduces unequal-dimensional
problems to equal dimensions, and optimizes the price schedule.
"""

from .domain import (
    Box,
    DiscreteProblem,
    Grid,
    PreconditionError,
    ScreeningProblem,
    ToleranceSet,
    assemble,
    build_grid,
    grid_from_points,
)
from .expr import DomainError, Expression, ParseError, differentiate, evaluate, parse, to_string
from .transform import (
    NOT_OFFERED,
    PriceSchedule,
    UtilityProfile,
    compute_profit,
    cost_schedule,
    is_b_convex,
    price_to_utility,
    random_schedule,
    tie_break,
    utility_to_price,
)
from .conditions import (
    BSegment,
    CheckResult,
    LevelSet,
    SegmentError,
    check_b0,
    check_b1,
    check_b2_side,
    check_b3,
    check_b_linearity,
    check_level_independence,
    fourth_derivative_sample,
    level_set,
    run_condition_suite,
    solve_b_segment,
)
from .reduction import (
    GoodsReduction,
    TypeReduction,
    build_tilde_price,
    check_effective_cost_convexity,
    cluster_points,
    lift_schedule,
    reduce_goods,
    reduce_types,
)
from .solver import SolveResult, default_bounds, profit_curve, solve_bruteforce, solve_localsearch
from .verify import (
    TheoremCheck,
    verify_cor52,
    verify_lemma43,
    verify_prop31,
    verify_prop51,
    verify_thm44,
    verify_transfer,
)
from .presets import PRESETS, build_problem, preset_config

__version__ = "0.1.0"

__all__ = [
    "Box",
    "BSegment",
    "CheckResult",
    "DiscreteProblem",
    "DomainError",
    "Expression",
    "GoodsReduction",
    "Grid",
    "LevelSet",
    "NOT_OFFERED",
    "ParseError",
    "PreconditionError",
    "PriceSchedule",
    "PRESETS",
    "ScreeningProblem",
    "SegmentError",
    "SolveResult",
    "TheoremCheck",
    "ToleranceSet",
    "TypeReduction",
    "UtilityProfile",
    "assemble",
    "build_grid",
    "build_problem",
    "build_tilde_price",
    "check_b0",
    "check_b1",
    "check_b2_side",
    "check_b3",
    "check_b_linearity",
    "check_effective_cost_convexity",
    "check_level_independence",
    "cluster_points",
    "compute_profit",
    "cost_schedule",
    "default_bounds",
    "differentiate",
    "evaluate",
    "fourth_derivative_sample",
    "grid_from_points",
    "is_b_convex",
    "level_set",
    "lift_schedule",
    "parse",
    "preset_config",
    "price_to_utility",
    "profit_curve",
    "random_schedule",
    "reduce_goods",
    "reduce_types",
    "run_condition_suite",
    "solve_b_segment",
    "solve_bruteforce",
    "solve_localsearch",
    "tie_break",
    "to_string",
    "utility_to_price",
    "verify_cor52",
    "verify_lemma43",
    "verify_prop31",
    "verify_prop51",
    "verify_thm44",
    "verify_transfer",
]
