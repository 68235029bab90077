"""Excited (cookie) random walks on the integers.

Layers: ``env`` (cookie environments), ``walk`` (the step kernel),
``exact`` (finite-chain and path-sum oracles), ``estimate`` (Monte Carlo
estimators), ``experiments`` (scenario runners) and ``cli``.
"""

from .env import (
    CookieRow,
    EnvironmentSpec,
    EnvironmentView,
    ValidationError,
    drift_delta,
    expected_delta,
    leftover_psi,
    make_environment,
)
from .estimate import (
    AssumptionError,
    Estimate,
    McConfig,
    mc_consumed_drift,
    mc_escape_prob,
    mc_martingale_check,
    mc_speed,
)
from .exact import (
    EventSpec,
    build_capped_chain,
    crossing_hitting_prob,
    escape_prob_upper_bounds,
    path_sum_event_prob,
    solve_expected_exit_time,
    solve_hitting_prob,
)
from .experiments import classify, leftover_iterate, monotonicity_suite, phase_scan, predicted_escape_prob, zero_speed_scan
from .rng import RngStream
from .walk import StopCondition, WalkState, run_coupled_dominating, run_coupled_naive, run_until, step

__version__ = "0.1.0"
