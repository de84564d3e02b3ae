"""Backward dynamic programming for withdrawal and allocation controls.

At each rebalancing date the investor withdraws q from pre-withdrawal
wealth and then chooses the stock fraction p of what remains.  Absent
transaction costs both controls depend on the state only through total
wealth, so the date-i optimization runs on a one-dimensional wealth axis:

    U_i(w) = max over admissible (q, p) of  q + Phi_i(p*(w-q), (1-p)*(w-q))

where Phi_i is the two-dimensional continuation field produced by the
Green's-function advance of the lifted U_{i+1}.  The maximization splits
exactly into an inner allocation search (over p at each post-withdrawal
wealth node) and an outer withdrawal search (over q, reading the tabulated
inner maximum by linear interpolation in wealth).

Supported objectives reward total expected withdrawals and penalize a
terminal-wealth risk functional: linear shortfall (LS), probability of
shortfall (PS), or expected shortfall (ES) in its tail-average rewriting,
whose inner target w' is optimized by an outer one-dimensional search.
A small stabilization term epsilon * E[terminal wealth] pins down the
otherwise indifferent controls at very large wealth.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .grids import GridSpec, StateGrid, ValueField, build_grid, interpolate
from .greens import GreensFunction, advance_many
from .market import MarketParams, increment_moments, jump_second_moment_log

__all__ = [
    "Scenario",
    "ObjectiveSpec",
    "ControlField",
    "SolveResult",
    "OuterSearchError",
    "ControlFileError",
    "admissible_q",
    "admissible_p",
    "terminal_condition",
    "risk_function",
    "rebalance_step",
    "solve_fixed",
    "solve_ew_es",
    "save_controls",
    "load_controls",
    "default_grid_spec",
    "audit_admissibility",
]

CONTROL_MAGIC = b"DECUMCTL\x01\n"
CONTROL_SCHEMA = 1


class OuterSearchError(RuntimeError):
    """Outer VaR-target search failed to bracket a maximum."""

    def __init__(self, message: str, scan_points: np.ndarray, scan_values: np.ndarray):
        super().__init__(message)
        self.scan_points = scan_points
        self.scan_values = scan_values


class ControlFileError(ValueError):
    """Malformed, truncated, or incompatible control file."""


@dataclass(frozen=True)
class Scenario:
    """Horizon, rebalance schedule, withdrawal bounds, and stabilization.

    Withdrawals and rebalances happen at t = 0, dt, ..., (M-1)*dt; at the
    horizon T = M*dt nothing is withdrawn and stocks are liquidated.  The
    real-estate figures are informational (a hedge of last resort backing
    the tolerance for negative terminal wealth) and do not enter the
    optimization.
    """

    horizon: float = 30.0
    n_rebalances: int = 30
    w0: float = 1000.0
    q_min: float = 30.0
    q_max: float = 60.0
    p_min: float = 0.0
    p_max: float = 1.0
    epsilon: float = -1e-4
    real_estate: float = 400.0
    accessible_real_estate: float = 200.0

    def __post_init__(self):
        if self.horizon <= 0.0 or self.n_rebalances < 1:
            raise ValueError("need horizon > 0 and at least one rebalance date")
        if self.q_min > self.q_max:
            raise ValueError(f"q_min {self.q_min} exceeds q_max {self.q_max}")
        if not 0.0 <= self.p_min <= self.p_max <= 1.0:
            raise ValueError("need 0 <= p_min <= p_max <= 1")
        if abs(self.epsilon) * max(self.q_max, 1.0) >= 0.1:
            raise ValueError(f"stabilization epsilon {self.epsilon} is not small")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_rebalances

    @property
    def rebalance_times(self) -> np.ndarray:
        return np.arange(self.n_rebalances) * self.dt


@dataclass(frozen=True)
class ObjectiveSpec:
    """Risk measure and scalarization weight.

    kind "LS": penalty kappa * E[min(W_T - w_target, 0)]
    kind "PS": penalty kappa * Prob[W_T < w_target]
    kind "ES": reward  kappa * (tail mean of the worst alpha fraction),
               embedded via w' + min(W_T - w', 0)/alpha with w' optimized.
    """

    kind: str
    kappa: float
    w_target: float = 0.0
    alpha: float = 0.05

    def __post_init__(self):
        if self.kind not in ("LS", "PS", "ES"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kappa <= 0.0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if self.kind == "ES" and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")


def admissible_q(w_minus: float, t_i: float, scenario: Scenario) -> tuple[float, float]:
    """Admissible withdrawal interval at a rebalancing date.

    Full [q_min, q_max] when wealth covers the cap; otherwise the investor
    may withdraw at most the wealth itself but never less than q_min
    (forcing borrowing when already short).  Zero at the horizon.
    """
    if _is_terminal(t_i, scenario):
        return (0.0, 0.0)
    if w_minus >= scenario.q_max:
        return (scenario.q_min, scenario.q_max)
    return (scenario.q_min, max(scenario.q_min, w_minus))


def admissible_p(w_plus: float, t_i: float, scenario: Scenario) -> tuple[float, float]:
    """Admissible stock fraction: [p_min, p_max] while solvent, else zero
    (trading ceases once wealth is exhausted, and at the horizon)."""
    if _is_terminal(t_i, scenario) or w_plus <= 0.0:
        return (0.0, 0.0)
    return (scenario.p_min, scenario.p_max)


def _is_terminal(t_i: float, scenario: Scenario) -> bool:
    return t_i >= scenario.horizon - 1e-9 * max(scenario.horizon, 1.0)


def risk_function(obj: ObjectiveSpec, w, w_prime: Optional[float] = None):
    """The terminal risk functional G(W_T) without weight or stabilization."""
    w = np.asarray(w, dtype=float)
    if obj.kind == "LS":
        return np.minimum(w - obj.w_target, 0.0)
    if obj.kind == "PS":
        return -(w < obj.w_target).astype(float)
    if w_prime is None:
        raise ValueError("ES terminal condition requires w_prime")
    return w_prime + np.minimum(w - w_prime, 0.0) / obj.alpha


def terminal_condition(
    obj: ObjectiveSpec,
    w,
    w_prime: Optional[float] = None,
    epsilon: float = 0.0,
):
    """Terminal value kappa * G(w) + epsilon * w on a wealth array."""
    return obj.kappa * risk_function(obj, w, w_prime) + epsilon * np.asarray(w, dtype=float)


# ---------------------------------------------------------------------------
# workspace: wealth axis, lift tables, control grids

class DpWorkspace:
    """Precomputed geometry shared by every solve on one grid/scenario pair."""

    def __init__(
        self,
        grid: StateGrid,
        scenario: Scenario,
        n_q: int = 61,
        n_p: int = 101,
        wealth_refine: int = 4,
    ):
        self.grid = grid
        self.scenario = scenario
        self.n_q = int(n_q)
        self.n_p = int(n_p)
        if self.n_q < 2 or self.n_p < 2:
            raise ValueError("need at least two candidate values per control")
        spec = grid.spec

        # Wealth axis: the reflected debt nodes for w < 0 and a log-spaced
        # positive branch refined relative to the 2-D lattice spacing.
        neg = -grid.b[::-1]
        w_lo = min(spec.s_min, spec.b_min)
        w_hi = spec.s_max + spec.b_max
        h_ref = min(grid.h_s, grid.h_b) / float(wealth_refine)
        n_pos = int(np.ceil(np.log(w_hi / w_lo) / h_ref)) + 1
        pos = np.geomspace(w_lo, w_hi, n_pos)
        self.wealth_axis = np.concatenate([neg, pos])
        self.n_neg = neg.size
        self.n_pos = pos.size

        self.q_grid = np.linspace(scenario.q_min, scenario.q_max, self.n_q)
        self.p_grid = np.linspace(scenario.p_min, scenario.p_max, self.n_p)

        # Gather tables for lifting a wealth profile onto the 2-D lattice.
        w2d = grid.s[:, None] + grid.b[None, :]
        idx = np.searchsorted(self.wealth_axis, w2d, side="right") - 1
        idx = np.clip(idx, 0, self.wealth_axis.size - 2)
        denom = self.wealth_axis[idx + 1] - self.wealth_axis[idx]
        frac = (w2d - self.wealth_axis[idx]) / denom
        self._lift_idx = idx.astype(np.int64)
        self._lift_frac = np.clip(frac, 0.0, 1.0)
        # Insolvent lattice wealth -b'_j is negative axis node n_b - 1 - j.
        self._ins_map = np.arange(spec.n_b - 1, -1, -1)

        # Allocation candidates for every positive-axis node.
        wp = pos
        self._alloc_s = self.p_grid[None, :] * wp[:, None]
        self._alloc_b = (1.0 - self.p_grid)[None, :] * wp[:, None]

    def lift(self, profile: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Wealth profile -> (solvent, insolvent) lattice fields."""
        lo = profile[self._lift_idx]
        hi = profile[self._lift_idx + 1]
        solvent = lo + self._lift_frac * (hi - lo)
        ins_row = profile[self._ins_map]
        insolvent = np.broadcast_to(ins_row[None, :], self.grid.shape).copy()
        return solvent, insolvent


def _optimize_date(
    ws: DpWorkspace,
    phi: ValueField,
    aux_fields: list[ValueField],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[np.ndarray]]:
    """One rebalancing-date optimization on the wealth axis.

    Returns (value profile U, q table, p table, continuation-only aux
    profiles evaluated under the chosen controls).
    """
    scen = ws.scenario
    axis = ws.wealth_axis
    n_neg = ws.n_neg

    # Inner allocation search at positive post-withdrawal wealth nodes.
    alloc_vals = interpolate(phi, ws._alloc_s, ws._alloc_b)
    p_idx = np.argmax(alloc_vals, axis=1)
    rows = np.arange(ws.n_pos)
    h_pos = alloc_vals[rows, p_idx]
    p_pos = ws.p_grid[p_idx]

    # Insolvent post-withdrawal wealth: trading has ceased, p = 0.
    neg_axis = axis[:n_neg]
    h_neg = interpolate(phi, np.full(n_neg, ws.grid.spec.s_min), neg_axis)
    h = np.concatenate([h_neg, h_pos])
    p_table = np.concatenate([np.zeros(n_neg), p_pos])

    # Outer withdrawal search at every pre-withdrawal wealth node.
    cap = np.where(axis >= scen.q_max, scen.q_max, np.maximum(scen.q_min, axis))
    q_cand = np.minimum(ws.q_grid[None, :], cap[:, None])
    w_plus = axis[:, None] - q_cand
    h_at = np.interp(w_plus.ravel(), axis, h).reshape(w_plus.shape)
    cand = q_cand + h_at
    k_idx = np.argmax(cand, axis=1)
    rows_all = np.arange(axis.size)
    u = cand[rows_all, k_idx]
    q_table = q_cand[rows_all, k_idx]

    # Replay the chosen controls through each auxiliary continuation field.
    aux_profiles = []
    if aux_fields:
        s_star = np.concatenate([np.full(n_neg, ws.grid.spec.s_min), p_pos * axis[n_neg:]])
        b_star = np.concatenate([neg_axis, (1.0 - p_pos) * axis[n_neg:]])
        w_plus_star = axis - q_table
        for aux in aux_fields:
            aux_h = interpolate(aux, s_star, b_star)
            aux_profiles.append(np.interp(w_plus_star, axis, aux_h))
    return u, q_table, p_table, aux_profiles


@dataclass
class ControlField:
    """Stored optimal controls: per date, withdrawal over pre-withdrawal
    wealth and stock fraction over post-withdrawal wealth, both tabulated
    on one wealth axis and read back by linear interpolation."""

    wealth_axis: np.ndarray
    times: np.ndarray
    q_tables: np.ndarray
    p_tables: np.ndarray
    scenario: Scenario
    objective: Optional[ObjectiveSpec] = None
    grid_spec: Optional[GridSpec] = None
    w_star: Optional[float] = None
    n_q: int = 61
    n_p: int = 101

    def __post_init__(self):
        m = self.times.size
        if self.q_tables.shape != (m, self.wealth_axis.size):
            raise ValueError("q_tables shape does not match times x wealth_axis")
        if self.p_tables.shape != (m, self.wealth_axis.size):
            raise ValueError("p_tables shape does not match times x wealth_axis")

    def withdrawal(self, i: int, w_minus: np.ndarray) -> np.ndarray:
        """Interpolated withdrawal at date index i, clamped into the
        admissible interval for each wealth."""
        scen = self.scenario
        q = np.interp(w_minus, self.wealth_axis, self.q_tables[i])
        cap = np.where(w_minus >= scen.q_max, scen.q_max, np.maximum(scen.q_min, w_minus))
        return np.clip(q, scen.q_min, cap)

    def stock_fraction(self, i: int, w_plus: np.ndarray) -> np.ndarray:
        """Interpolated stock fraction at date index i, zero when insolvent."""
        p = np.interp(w_plus, self.wealth_axis, self.p_tables[i])
        p = np.clip(p, self.scenario.p_min, self.scenario.p_max)
        return np.where(w_plus > 0.0, p, 0.0)


@dataclass
class SolveResult:
    """Objective value at (w0, t_0^-) and its reward/risk decomposition."""

    value: float
    ew_component: float
    risk_component: float
    e_wt: float
    controls: ControlField
    objective: ObjectiveSpec
    scenario: Scenario
    w_star: Optional[float] = None
    value_profile: Optional[np.ndarray] = None

    @property
    def ew_per_period(self) -> float:
        return self.ew_component / self.scenario.n_rebalances

    def decomposition_residual(self) -> float:
        recomposed = (
            self.ew_component
            + self.objective.kappa * self.risk_component
            + self.scenario.epsilon * self.e_wt
        )
        return abs(recomposed - self.value) / max(1.0, abs(self.value))


@dataclass
class RebalanceResult:
    v_minus: ValueField
    wealth_axis: np.ndarray
    value_1d: np.ndarray
    q_table: np.ndarray
    p_table: np.ndarray


def rebalance_step(
    v_plus: ValueField,
    t_i: float,
    scenario: Scenario,
    n_q: int = 61,
    n_p: int = 101,
    workspace: Optional[DpWorkspace] = None,
) -> RebalanceResult:
    """Optimize the (q, p) pair at one date given the continuation field.

    ``v_plus`` is the advanced field at t_i^+; the returned ``v_minus`` is
    its pre-withdrawal counterpart, a function of total wealth lifted back
    onto the lattice.  Insolvent wealth is forced to q = q_min, p = 0.
    """
    v_plus.validate_finite()
    ws = workspace or DpWorkspace(v_plus.grid, scenario, n_q=n_q, n_p=n_p)
    u, q_table, p_table, _ = _optimize_date(ws, v_plus, [])
    solvent, insolvent = ws.lift(u)
    v_minus = ValueField(v_plus.grid, solvent, insolvent, time_label=v_plus.time_label)
    return RebalanceResult(v_minus, ws.wealth_axis, u, q_table, p_table)


def solve_fixed(
    obj: ObjectiveSpec,
    scenario: Scenario,
    grid: StateGrid | GridSpec,
    green: GreensFunction,
    w_prime: Optional[float] = None,
    *,
    n_q: int = 61,
    n_p: int = 101,
    value_only: bool = False,
    workspace: Optional[DpWorkspace] = None,
) -> SolveResult:
    """Backward induction for a fixed objective (and fixed w' for ES).

    Alternates the Green's-function advance with the rebalancing-date
    optimization from the terminal condition down to t_0, accumulating the
    expected-withdrawal and expected-terminal-wealth profiles in lockstep
    under the chosen controls so the value decomposes exactly.
    """
    if isinstance(grid, GridSpec):
        grid = build_grid(grid)
    if obj.kind == "ES" and w_prime is None:
        raise ValueError("solve_fixed with an ES objective requires w_prime")
    if abs(green.dt - scenario.dt) > 1e-12 * max(1.0, scenario.dt):
        raise ValueError(
            f"Green's function dt {green.dt} does not match rebalance interval {scenario.dt}"
        )
    ws = workspace or DpWorkspace(grid, scenario, n_q=n_q, n_p=n_p)
    if ws.n_q != n_q or ws.n_p != n_p:
        raise ValueError("workspace control discretization differs from requested")
    axis = ws.wealth_axis
    m = scenario.n_rebalances
    dt = scenario.dt

    u = np.asarray(terminal_condition(obj, axis, w_prime, scenario.epsilon))
    if value_only:
        aux = []
    else:
        aux = [
            np.zeros_like(axis),                            # expected withdrawals
            axis.copy(),                                    # expected terminal wealth
            np.asarray(risk_function(obj, axis, w_prime)),  # risk functional
        ]

    times = scenario.rebalance_times
    q_tables = np.empty((m, axis.size))
    p_tables = np.empty((m, axis.size))

    for i in range(m - 1, -1, -1):
        stack = [u] + aux
        solv = np.empty((len(stack),) + grid.shape)
        ins = np.empty_like(solv)
        for k, profile in enumerate(stack):
            solv[k], ins[k] = ws.lift(profile)
        adv_s, adv_i = advance_many(solv, ins, grid, green)
        t_label = (i + 1) * dt
        phi = ValueField(grid, adv_s[0], adv_i[0], time_label=t_label)
        aux_fields = [
            ValueField(grid, adv_s[k + 1], adv_i[k + 1], time_label=t_label)
            for k in range(len(aux))
        ]
        u, q_tables[i], p_tables[i], aux_profiles = _optimize_date(ws, phi, aux_fields)
        if aux:
            aux[0] = q_tables[i] + aux_profiles[0]
            aux[1] = aux_profiles[1]
            aux[2] = aux_profiles[2]

    value = float(np.interp(scenario.w0, axis, u))
    if value_only:
        ew0 = wt0 = risk0 = np.nan
    else:
        ew0 = float(np.interp(scenario.w0, axis, aux[0]))
        wt0 = float(np.interp(scenario.w0, axis, aux[1]))
        risk0 = float(np.interp(scenario.w0, axis, aux[2]))

    controls = ControlField(
        wealth_axis=axis.copy(),
        times=times,
        q_tables=q_tables,
        p_tables=p_tables,
        scenario=scenario,
        objective=obj,
        grid_spec=grid.spec,
        w_star=w_prime if obj.kind == "ES" else None,
        n_q=n_q,
        n_p=n_p,
    )
    return SolveResult(
        value=value,
        ew_component=ew0,
        risk_component=risk0,
        e_wt=wt0,
        controls=controls,
        objective=obj,
        scenario=scenario,
        w_star=w_prime if obj.kind == "ES" else None,
        value_profile=u,
    )


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def solve_ew_es(
    alpha: float,
    kappa: float,
    scenario: Scenario,
    grid: StateGrid | GridSpec,
    green: GreensFunction,
    *,
    n_q: int = 61,
    n_p: int = 101,
    scan_lo: Optional[float] = None,
    scan_hi: Optional[float] = None,
    n_scan: int = 13,
    xtol: float = 1e-3,
    workspace: Optional[DpWorkspace] = None,
) -> SolveResult:
    """Expected-shortfall objective: outer search over the VaR candidate w'.

    A coarse scan over wealth-axis values brackets the maximum of the
    w'-parametrized fixed solve, then golden-section refinement narrows it
    to ``xtol`` wealth units.  The maximizer is the alpha-VaR of terminal
    wealth under the optimal control.
    """
    if isinstance(grid, GridSpec):
        grid = build_grid(grid)
    obj = ObjectiveSpec("ES", kappa=kappa, alpha=alpha)
    ws = workspace or DpWorkspace(grid, scenario, n_q=n_q, n_p=n_p)

    cache: dict[float, float] = {}

    def val(wp: float) -> float:
        wp = float(wp)
        if wp not in cache:
            cache[wp] = solve_fixed(
                obj, scenario, grid, green, w_prime=wp,
                n_q=n_q, n_p=n_p, value_only=True, workspace=ws,
            ).value
        return cache[wp]

    lo = -1.5 * scenario.w0 if scan_lo is None else float(scan_lo)
    hi = 1.5 * scenario.w0 if scan_hi is None else float(scan_hi)
    raw_points = np.linspace(lo, hi, n_scan)
    # snap candidates to wealth-axis values (deduplicated, order kept)
    snapped = ws.wealth_axis[
        np.clip(np.searchsorted(ws.wealth_axis, raw_points), 0, ws.wealth_axis.size - 1)
    ]
    points = np.unique(snapped)
    values = np.array([val(p) for p in points])
    best = int(np.argmax(values))
    if best == 0 or best == points.size - 1:
        raise OuterSearchError(
            f"outer w' search maximum at scan boundary {points[best]:.6g}; "
            "widen scan_lo/scan_hi",
            points,
            values,
        )

    a, b = float(points[best - 1]), float(points[best + 1])
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = val(c), val(d)
    while (b - a) > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = val(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = val(d)
    w_star = 0.5 * (a + b)

    result = solve_fixed(
        obj, scenario, grid, green, w_prime=w_star,
        n_q=n_q, n_p=n_p, value_only=False, workspace=ws,
    )
    return result


def default_grid_spec(
    market: MarketParams,
    scenario: Scenario,
    n_s: int = 512,
    n_b: Optional[int] = None,
    width_sigmas: float = 8.0,
) -> GridSpec:
    """Localization bounds from a drift-plus-sigma envelope of log wealth.

    Both axes span w0 * exp(+/-(|mean log growth| * T + width_sigmas *
    sigma_total * sqrt(T))) using the stock's total (diffusive plus jump)
    volatility, since either asset may hold the whole portfolio at a
    rebalance.  Localization error beyond eight sigmas is below Monte
    Carlo noise.
    """
    mean, cov = increment_moments(market, 1.0)
    sigma_tot = float(np.sqrt(cov[0, 0]))
    t = scenario.horizon
    width = abs(mean[0]) * t + width_sigmas * sigma_tot * np.sqrt(t)
    lo = scenario.w0 * np.exp(-width)
    hi = scenario.w0 * np.exp(width)
    return GridSpec(
        n_s=n_s,
        n_b=n_b if n_b is not None else n_s,
        s_min=lo,
        s_max=hi,
        b_min=lo,
        b_max=hi,
    )


def audit_admissibility(controls: ControlField, atol: float = 1e-9) -> None:
    """Raise if any stored control violates its admissible set."""
    scen = controls.scenario
    axis = controls.wealth_axis
    for i, t_i in enumerate(controls.times):
        cap = np.where(axis >= scen.q_max, scen.q_max, np.maximum(scen.q_min, axis))
        q = controls.q_tables[i]
        if np.any(q < scen.q_min - atol) or np.any(q > cap + atol):
            raise AssertionError(f"withdrawal table at date {t_i} leaves the admissible set")
        p = controls.p_tables[i]
        w_plus = axis - q
        bad = (w_plus <= 0.0) & (np.abs(p) > atol)
        if np.any(bad):
            raise AssertionError(f"allocation table at date {t_i} trades while insolvent")
        if np.any(p < scen.p_min - atol) or np.any(p > scen.p_max + atol):
            raise AssertionError(f"allocation table at date {t_i} outside [p_min, p_max]")


# ---------------------------------------------------------------------------
# control-file persistence

def _scenario_to_dict(s: Scenario) -> dict:
    return {
        "horizon": s.horizon,
        "n_rebalances": s.n_rebalances,
        "w0": s.w0,
        "q_min": s.q_min,
        "q_max": s.q_max,
        "p_min": s.p_min,
        "p_max": s.p_max,
        "epsilon": s.epsilon,
        "real_estate": s.real_estate,
        "accessible_real_estate": s.accessible_real_estate,
    }


def _objective_to_dict(o: Optional[ObjectiveSpec]) -> Optional[dict]:
    if o is None:
        return None
    return {"kind": o.kind, "kappa": o.kappa, "w_target": o.w_target, "alpha": o.alpha}


def _grid_to_dict(g: Optional[GridSpec]) -> Optional[dict]:
    if g is None:
        return None
    return {
        "n_s": g.n_s, "n_b": g.n_b,
        "s_min": g.s_min, "s_max": g.s_max,
        "b_min": g.b_min, "b_max": g.b_max,
    }


def save_controls(controls: ControlField, path: str) -> None:
    """Self-describing deterministic binary layout.

    magic, little-endian uint64 header length, UTF-8 JSON header (sorted
    keys), then the float64 arrays named in header["arrays"] in order.
    Identical controls serialize to identical bytes.
    """
    arrays = {
        "times": controls.times,
        "wealth_axis": controls.wealth_axis,
        "q_tables": controls.q_tables,
        "p_tables": controls.p_tables,
    }
    header = {
        "schema": CONTROL_SCHEMA,
        "scenario": _scenario_to_dict(controls.scenario),
        "objective": _objective_to_dict(controls.objective),
        "grid": _grid_to_dict(controls.grid_spec),
        "w_star": controls.w_star,
        "n_q": controls.n_q,
        "n_p": controls.n_p,
        "arrays": [
            {"name": name, "shape": list(arr.shape), "dtype": "<f8"}
            for name, arr in arrays.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(CONTROL_MAGIC)
    buf.write(len(blob).to_bytes(8, "little"))
    buf.write(blob)
    for arr in arrays.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_controls(path: str) -> ControlField:
    """Inverse of save_controls; rejects truncated or mismatched files."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CONTROL_MAGIC):
        raise ControlFileError(f"{path}: not a control file (bad magic)")
    off = len(CONTROL_MAGIC)
    if len(data) < off + 8:
        raise ControlFileError(f"{path}: truncated header length")
    hlen = int.from_bytes(data[off : off + 8], "little")
    off += 8
    if len(data) < off + hlen:
        raise ControlFileError(f"{path}: truncated header")
    try:
        header = json.loads(data[off : off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ControlFileError(f"{path}: unreadable header: {exc}") from exc
    off += hlen
    if header.get("schema") != CONTROL_SCHEMA:
        raise ControlFileError(
            f"{path}: unsupported schema {header.get('schema')!r} "
            f"(expected {CONTROL_SCHEMA})"
        )
    arrays = {}
    for meta in header["arrays"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(data) < off + nbytes:
            raise ControlFileError(f"{path}: truncated array {meta['name']!r}")
        arrays[meta["name"]] = np.frombuffer(
            data[off : off + nbytes], dtype="<f8"
        ).reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise ControlFileError(f"{path}: {len(data) - off} trailing bytes")

    scen = Scenario(**header["scenario"])
    obj = ObjectiveSpec(**header["objective"]) if header["objective"] else None
    gspec = GridSpec(**header["grid"]) if header["grid"] else None
    return ControlField(
        wealth_axis=arrays["wealth_axis"],
        times=arrays["times"],
        q_tables=arrays["q_tables"],
        p_tables=arrays["p_tables"],
        scenario=scen,
        objective=obj,
        grid_spec=gspec,
        w_star=header["w_star"],
        n_q=header["n_q"],
        n_p=header["n_p"],
    )
