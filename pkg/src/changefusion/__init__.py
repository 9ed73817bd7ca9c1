"""Decentralized Bayesian quickest change detection with analog fusion
over a Gaussian multiple-access channel: optimal affine controls,
belief-grid dynamic programming, and a Monte Carlo performance engine.
"""

from .model import (
    AffineControl,
    ChangeModel,
    DegenerateControlError,
    NetworkModel,
    effective_variance,
    fuse_received,
    posterior_update,
    prior_update,
    sample_change_time,
)
from .control import (
    AmplitudeCaps,
    InnerSolution,
    amplitude_caps,
    inner_solution,
    optimal_alpha,
    optimal_c,
)
from .dp import (
    EnergyWeights,
    ValueFunction,
    ValueIterationError,
    energy_bellman_solve,
    expected_cost_to_go,
    solve_value_function,
    stopping_threshold,
)
from .sim import CurvePoint, RunawayTrialError, TrialRecord, estimate, run_trial, sweep_lambda

__version__ = "0.1.0"
