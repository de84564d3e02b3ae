"""Forward evaluation of stored controls.

Paths apply the tabulated withdrawal and allocation controls at each
rebalancing date (interpolated in wealth exactly as the solver reads
them, then clamped into the admissible set) and evolve between dates
either by exact sampling of the market model or by compounding block-
bootstrapped historical monthly returns.  Once post-withdrawal wealth is
non-positive the stock position is zero and the debt compounds at the
bond return plus the borrowing spread.

Summary statistics follow the terminal-wealth conventions used for the
objectives: expected shortfall is the mean of the worst ceil(alpha * N)
outcomes and the value-at-risk is that order statistic itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bootstrap import BootstrapSpec, ReturnSeries, yearly_growth_factors
from .market import MarketParams, sample_increment
from .solver import ControlField, GridSpec, Scenario

__all__ = [
    "SummaryStats",
    "summary",
    "simulate_synthetic",
    "simulate_bootstrap",
    "bengen_strategy",
    "estimate_alpha_star",
]

_CHUNK = 1 << 18
_FAN_PATHS = 200_000
_FAN_LEVELS = (5.0, 50.0, 95.0)


@dataclass
class SummaryStats:
    """Terminal-wealth and withdrawal statistics of one evaluation run."""

    n_paths: int
    alpha: float
    w_target: float
    ew_per_period: float
    ew_total: float
    ls: float
    es_alpha: float
    ps: float
    var_alpha: float
    se_ew_per_period: float
    se_ls: float
    se_ps: float
    se_es: float
    terminal_wealth: np.ndarray = field(repr=False)
    total_withdrawals: np.ndarray = field(repr=False)
    fan_times: np.ndarray = field(repr=False, default=None)
    wealth_fan: np.ndarray = field(repr=False, default=None)
    stock_fan: np.ndarray = field(repr=False, default=None)
    withdrawal_fan: np.ndarray = field(repr=False, default=None)
    q_interior_fraction: float = np.nan
    q_interior_delta: float = np.nan

    def cdf(self, n_points: int = 2001) -> tuple[np.ndarray, np.ndarray]:
        """Empirical terminal-wealth CDF thinned to ``n_points`` quantiles."""
        w = np.sort(self.terminal_wealth)
        n = w.size
        take = np.unique(np.linspace(0, n - 1, min(n_points, n)).astype(int))
        return w[take], (take + 1) / n


def summary(
    terminal_wealth: np.ndarray,
    total_withdrawals: np.ndarray,
    alpha: float,
    w_target: float,
    n_rebalances: int,
) -> SummaryStats:
    """Statistics over terminal wealth and per-path withdrawal totals."""
    wt = np.asarray(terminal_wealth, dtype=float)
    qs = np.asarray(total_withdrawals, dtype=float)
    n = wt.size
    if n == 0 or qs.size != n:
        raise ValueError("need equal-length, non-empty sample arrays")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    k = int(np.ceil(alpha * n))
    if k < 1:
        raise ValueError(f"alpha * N = {alpha * n:.3g} < 1: tail is empty")

    srt = np.sort(wt)
    tail = srt[:k]
    es = float(tail.mean())
    var = float(srt[k - 1])
    shortfall = np.minimum(wt - w_target, 0.0)
    ls = float(shortfall.mean())
    ps = float(np.mean(wt < w_target))
    ew_total = float(qs.mean())
    m = n_rebalances
    return SummaryStats(
        n_paths=n,
        alpha=alpha,
        w_target=w_target,
        ew_per_period=ew_total / m,
        ew_total=ew_total,
        ls=ls,
        es_alpha=es,
        ps=ps,
        var_alpha=var,
        se_ew_per_period=float(qs.std() / np.sqrt(n)) / m,
        se_ls=float(shortfall.std() / np.sqrt(n)),
        se_ps=float(np.sqrt(max(ps * (1.0 - ps), 1.0 / n) / n)),
        se_es=float(tail.std() / np.sqrt(k)) if k > 1 else float("nan"),
        terminal_wealth=wt,
        total_withdrawals=qs,
    )


def _check_scenarios_match(controls: ControlField, scenario: Scenario) -> None:
    c = controls.scenario
    mismatched = [
        name
        for name, a, b in [
            ("horizon", c.horizon, scenario.horizon),
            ("n_rebalances", c.n_rebalances, scenario.n_rebalances),
            ("q_min", c.q_min, scenario.q_min),
            ("q_max", c.q_max, scenario.q_max),
            ("p_min", c.p_min, scenario.p_min),
            ("p_max", c.p_max, scenario.p_max),
        ]
        if not np.isclose(a, b, rtol=1e-12, atol=1e-12)
    ]
    if mismatched:
        raise ValueError(f"control file scenario differs from run scenario in: {mismatched}")
    if controls.times.size != scenario.n_rebalances:
        raise ValueError(
            f"control file holds {controls.times.size} rebalance dates, "
            f"scenario needs {scenario.n_rebalances}"
        )


def check_grid_compatible(
    controls: ControlField,
    expected: Optional[GridSpec],
    allow_foreign_grid: bool = False,
) -> None:
    """Reject controls tabulated on a different lattice unless explicitly
    allowed (reading them then relies on wealth interpolation alone)."""
    if expected is None or allow_foreign_grid or controls.grid_spec is None:
        return
    if controls.grid_spec != expected:
        raise ValueError(
            "control file was computed on a different grid "
            f"({controls.grid_spec} vs {expected}); pass allow_foreign_grid=True "
            "to interpolate anyway"
        )


def _run_paths(
    controls: ControlField,
    scenario: Scenario,
    spread: float,
    chunk_growth: Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]],
    n_paths: int,
    seed: int,
    alpha: float,
    w_target: float,
    q_interior_delta: Optional[float],
    fan_paths: int,
    chunk: int = _CHUNK,
) -> SummaryStats:
    """Common path engine: apply controls at dates, grow between them.

    ``chunk_growth(rng, n)`` returns per-step gross growth factors of shape
    (n, M) for stock and bond; the engine multiplies debt (negative bond
    balance) by exp(spread * dt) on top of the bond factor.
    """
    _check_scenarios_match(controls, scenario)
    m = scenario.n_rebalances
    dt = scenario.dt
    if q_interior_delta is None:
        q_interior_delta = (scenario.q_max - scenario.q_min) / max(controls.n_q - 1, 1)
    debt_factor = np.exp(spread * dt)

    seeds = np.random.SeedSequence(seed).spawn(int(np.ceil(n_paths / chunk)))
    terminal = np.empty(n_paths)
    totals = np.empty(n_paths)
    fan_keep = min(fan_paths, n_paths)
    wealth_rec = np.empty((fan_keep, m + 1))
    stock_rec = np.empty((fan_keep, m))
    q_rec = np.empty((fan_keep, m))
    interior = 0
    observations = 0

    done = 0
    for seq in seeds:
        n = min(chunk, n_paths - done)
        rng = np.random.default_rng(seq)
        gs, gb = chunk_growth(rng, n)
        s = np.zeros(n)
        b = np.zeros(n)
        qsum = np.zeros(n)
        keep = max(0, min(fan_keep - done, n))
        for i in range(m):
            w_minus = np.full(n, scenario.w0) if i == 0 else s + b
            q = controls.withdrawal(i, w_minus)
            qsum += q
            w_plus = w_minus - q
            p = controls.stock_fraction(i, w_plus)
            s = p * w_plus
            b = (1.0 - p) * w_plus
            # interior relative to the admissible interval: withdrawing the
            # whole balance when wealth is below q_max is an extreme, not an
            # interior choice
            q_cap = np.where(
                w_minus >= scenario.q_max, scenario.q_max,
                np.maximum(scenario.q_min, w_minus),
            )
            interior += int(np.count_nonzero(
                (q > scenario.q_min + q_interior_delta)
                & (q < q_cap - q_interior_delta)
            ))
            observations += n
            if keep:
                wealth_rec[done : done + keep, i] = w_minus[:keep]
                stock_rec[done : done + keep, i] = p[:keep]
                q_rec[done : done + keep, i] = q[:keep]
            s = s * gs[:, i]
            b = b * np.where(b < 0.0, gb[:, i] * debt_factor, gb[:, i])
        w_final = s + b
        terminal[done : done + n] = w_final
        totals[done : done + n] = qsum
        if keep:
            wealth_rec[done : done + keep, m] = w_final[:keep]
        done += n

    stats = summary(terminal, totals, alpha, w_target, m)
    stats.fan_times = np.concatenate([scenario.rebalance_times, [scenario.horizon]])
    stats.wealth_fan = np.percentile(wealth_rec, _FAN_LEVELS, axis=0)
    stats.stock_fan = np.percentile(stock_rec, _FAN_LEVELS, axis=0)
    stats.withdrawal_fan = np.percentile(q_rec, _FAN_LEVELS, axis=0)
    stats.q_interior_fraction = interior / observations
    stats.q_interior_delta = q_interior_delta
    return stats


def simulate_synthetic(
    controls: ControlField,
    market: MarketParams,
    scenario: Scenario,
    n_paths: int,
    seed: int = 0,
    *,
    alpha: float = 0.05,
    w_target: float = 0.0,
    q_interior_delta: Optional[float] = None,
    fan_paths: int = _FAN_PATHS,
    expected_grid: Optional[GridSpec] = None,
    allow_foreign_grid: bool = False,
) -> SummaryStats:
    """Monte Carlo under the parametric market, deterministic per seed."""
    check_grid_compatible(controls, expected_grid, allow_foreign_grid)
    dt = scenario.dt

    def growth(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        m = scenario.n_rebalances
        gs = np.empty((n, m))
        gb = np.empty((n, m))
        for i in range(m):
            inc = sample_increment(market, dt, rng, size=n)
            gs[:, i] = np.exp(inc.ds)
            gb[:, i] = np.exp(inc.db)
        return gs, gb

    return _run_paths(
        controls, scenario, market.mu_c_b, growth, n_paths, seed,
        alpha, w_target, q_interior_delta, fan_paths,
    )


def simulate_bootstrap(
    controls: ControlField,
    series: ReturnSeries,
    spec: BootstrapSpec,
    scenario: Scenario,
    spread: float = 0.03,
    *,
    alpha: float = 0.05,
    w_target: float = 0.0,
    q_interior_delta: Optional[float] = None,
    fan_paths: int = _FAN_PATHS,
    expected_grid: Optional[GridSpec] = None,
    allow_foreign_grid: bool = False,
) -> SummaryStats:
    """Replay stored controls against block-bootstrapped monthly history.

    Each rebalancing interval compounds dt * 12 resampled joint monthly
    returns; controls act only at the rebalance dates.  Debt accrues the
    borrowing spread multiplicatively on top of the resampled bond return.
    """
    check_grid_compatible(controls, expected_grid, allow_foreign_grid)
    if len(series) < 2:
        raise ValueError("return series too short to resample")
    months = scenario.dt * 12.0
    mps = int(round(months))
    if abs(months - mps) > 1e-9 or mps < 1:
        raise ValueError(
            f"rebalance interval {scenario.dt} years is not a whole number of months"
        )

    def growth(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        return yearly_growth_factors(
            series, rng, n, scenario.n_rebalances, mps,
            spec.expected_blocksize, spec.paired,
        )

    return _run_paths(
        controls, scenario, spread, growth, spec.n_paths, spec.seed,
        alpha, w_target, q_interior_delta, fan_paths,
    )


def bengen_strategy(scenario: Scenario) -> ControlField:
    """Fixed-rule baseline: withdraw 4% of initial capital every year and
    rebalance to a 50/50 stock/bond mix (while solvent)."""
    q = 0.04 * scenario.w0
    axis = np.array([-1e9, 1e9])
    m = scenario.n_rebalances
    return ControlField(
        wealth_axis=axis,
        times=scenario.rebalance_times,
        q_tables=np.full((m, axis.size), q),
        p_tables=np.full((m, axis.size), 0.5),
        scenario=scenario,
        objective=None,
        grid_spec=None,
        w_star=None,
        n_q=2,
        n_p=2,
    )


def estimate_alpha_star(
    controls: ControlField,
    market: MarketParams,
    scenario: Scenario,
    n_paths: int,
    seed: int = 0,
    w_target: float = 0.0,
) -> tuple[float, float]:
    """Monte Carlo estimate (and standard error) of Prob[W_T < w_target]
    under the stored control."""
    stats = simulate_synthetic(
        controls, market, scenario, n_paths, seed,
        w_target=w_target, fan_paths=1,
    )
    return stats.ps, stats.se_ps
