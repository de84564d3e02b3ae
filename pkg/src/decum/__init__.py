"""Optimal decumulation of retirement savings.

Dynamic-programming withdrawal and asset-allocation controls for a
stock/bond portfolio under a jump-diffusion market model, traded off
against left-tail risk measures of terminal wealth (linear shortfall,
probability of shortfall, expected shortfall).  Stored controls are
stress-tested by Monte Carlo simulation and by stationary block
bootstrapping of historical return series.

Monetary unit throughout: thousands of real (inflation-adjusted) dollars.
"""

from .market import (
    KouJumpParams,
    MarketParams,
    LogIncrement,
    jump_compensator,
    jump_log_char,
    joint_char,
    sample_increment,
)
from .grids import GridSpec, StateGrid, ValueField, build_grid, interpolate
from .greens import GreensFunction, build_green, advance
from .solver import (
    Scenario,
    ObjectiveSpec,
    ControlField,
    SolveResult,
    admissible_q,
    admissible_p,
    terminal_condition,
    rebalance_step,
    solve_fixed,
    solve_ew_es,
    save_controls,
    load_controls,
    default_grid_spec,
)
from .simulate import (
    SummaryStats,
    simulate_synthetic,
    simulate_bootstrap,
    bengen_strategy,
    summary,
    estimate_alpha_star,
)
from .bootstrap import ReturnSeries, BootstrapSpec, bootstrap_paths

__version__ = "0.1.0"
