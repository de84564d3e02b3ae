"""Run configuration: one YAML file drives solves, sweeps, and evaluations.

Market keys mirror the calibration-table names (mu_s, sigma_s, lambda_s,
u_s, eta1_s, eta2_s, the _b variants, rho_sb, mu_c_b); scenario and grid
keys mirror the investment-scenario names.  Validation errors name the
offending section and key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import yaml

from .bootstrap import BootstrapSpec
from .grids import GridSpec
from .market import KouJumpParams, MarketParams
from .solver import ObjectiveSpec, Scenario

__all__ = ["RunConfig", "ConfigError", "load_config"]


class ConfigError(ValueError):
    """Bad or missing configuration key."""


@dataclass(frozen=True)
class EsSearchConfig:
    scan_lo: float = -1500.0
    scan_hi: float = 1500.0
    n_scan: int = 13
    xtol: float = 1e-3


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 1_000_000
    seed: int = 1
    alpha: float = 0.05
    w_target: float = 0.0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")


@dataclass
class RunConfig:
    market: MarketParams
    scenario: Scenario
    grid: GridSpec
    objective: Optional[ObjectiveSpec] = None
    kappa_list: list = field(default_factory=list)
    n_q: int = 61
    n_p: int = 101
    mc: McConfig = field(default_factory=McConfig)
    bootstrap: BootstrapSpec = field(default_factory=BootstrapSpec)
    es_search: EsSearchConfig = field(default_factory=EsSearchConfig)
    output_dir: str = "out"

    def __post_init__(self):
        if any(k <= 0 for k in self.kappa_list):
            raise ConfigError("config kappa_list: entries must be strictly positive")
        if self.n_q < 2 or self.n_p < 2:
            raise ConfigError("config controls: n_q and n_p must be at least 2")


def _section(raw: dict, name: str, required: bool = True) -> dict:
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"config: missing section {name!r}")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r}: expected a mapping")
    return sec


def _take(sec: dict, section: str, key: str, kind=float, default=None):
    if key not in sec:
        if default is None:
            raise ConfigError(f"config {section}: missing key {key!r}")
        return default
    val = sec[key]
    try:
        return kind(val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config {section}.{key}: bad value {val!r}") from exc


def _market_from(sec: dict) -> MarketParams:
    def asset(suffix: str) -> KouJumpParams:
        return KouJumpParams(
            mu=_take(sec, "market", f"mu_{suffix}"),
            sigma=_take(sec, "market", f"sigma_{suffix}"),
            lam=_take(sec, "market", f"lambda_{suffix}"),
            u=_take(sec, "market", f"u_{suffix}"),
            eta1=_take(sec, "market", f"eta1_{suffix}"),
            eta2=_take(sec, "market", f"eta2_{suffix}"),
        )

    try:
        return MarketParams(
            stock=asset("s"),
            bond=asset("b"),
            rho_sb=_take(sec, "market", "rho_sb"),
            mu_c_b=_take(sec, "market", "mu_c_b"),
        )
    except ValueError as exc:
        raise ConfigError(f"config market: {exc}") from exc


def _scenario_from(sec: dict) -> Scenario:
    try:
        return Scenario(
            horizon=_take(sec, "scenario", "horizon", float, 30.0),
            n_rebalances=_take(sec, "scenario", "n_rebalances", int, 30),
            w0=_take(sec, "scenario", "w0"),
            q_min=_take(sec, "scenario", "q_min"),
            q_max=_take(sec, "scenario", "q_max"),
            p_min=_take(sec, "scenario", "p_min", float, 0.0),
            p_max=_take(sec, "scenario", "p_max", float, 1.0),
            epsilon=_take(sec, "scenario", "epsilon", float, -1e-4),
            real_estate=_take(sec, "scenario", "real_estate", float, 400.0),
            accessible_real_estate=_take(
                sec, "scenario", "accessible_real_estate", float, 200.0
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"config scenario: {exc}") from exc


def _grid_from(sec: dict) -> GridSpec:
    try:
        return GridSpec(
            n_s=_take(sec, "grid", "n_s", int),
            n_b=_take(sec, "grid", "n_b", int),
            s_min=_take(sec, "grid", "s_min"),
            s_max=_take(sec, "grid", "s_max"),
            b_min=_take(sec, "grid", "b_min"),
            b_max=_take(sec, "grid", "b_max"),
        )
    except ValueError as exc:
        raise ConfigError(f"config grid: {exc}") from exc


def _objective_from(sec: dict) -> ObjectiveSpec:
    kind = str(sec.get("kind", "")).upper()
    try:
        return ObjectiveSpec(
            kind=kind,
            kappa=_take(sec, "objective", "kappa"),
            w_target=_take(sec, "objective", "w_target", float, 0.0),
            alpha=_take(sec, "objective", "alpha", float, 0.05),
        )
    except ValueError as exc:
        raise ConfigError(f"config objective: {exc}") from exc


def load_config(path: str) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    market = _market_from(_section(raw, "market"))
    scenario = _scenario_from(_section(raw, "scenario"))
    grid = _grid_from(_section(raw, "grid"))
    obj_sec = _section(raw, "objective", required=False)
    objective = _objective_from(obj_sec) if obj_sec else None

    controls = _section(raw, "controls", required=False)
    mc_sec = _section(raw, "mc", required=False)
    try:
        mc = McConfig(
            n_paths=_take(mc_sec, "mc", "n_paths", int, 1_000_000),
            seed=_take(mc_sec, "mc", "seed", int, 1),
            alpha=_take(mc_sec, "mc", "alpha", float, 0.05),
            w_target=_take(mc_sec, "mc", "w_target", float, 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"config mc: {exc}") from exc

    boot_sec = _section(raw, "bootstrap", required=False)
    try:
        boot = BootstrapSpec(
            expected_blocksize=_take(
                boot_sec, "bootstrap", "expected_blocksize_months", float, 24.0
            ),
            paired=bool(boot_sec.get("paired", True)),
            n_paths=_take(boot_sec, "bootstrap", "n_paths", int, 1_000_000),
            seed=_take(boot_sec, "bootstrap", "seed", int, 2),
        )
    except ValueError as exc:
        raise ConfigError(f"config bootstrap: {exc}") from exc

    es_sec = _section(raw, "es_search", required=False)
    es = EsSearchConfig(
        scan_lo=_take(es_sec, "es_search", "scan_lo", float, -1500.0),
        scan_hi=_take(es_sec, "es_search", "scan_hi", float, 1500.0),
        n_scan=_take(es_sec, "es_search", "n_scan", int, 13),
        xtol=_take(es_sec, "es_search", "xtol", float, 1e-3),
    )

    kappas = raw.get("kappa_list", [])
    if kappas is None:
        kappas = []
    if not isinstance(kappas, list):
        raise ConfigError("config kappa_list: expected a list")

    return RunConfig(
        market=market,
        scenario=scenario,
        grid=grid,
        objective=objective,
        kappa_list=[float(k) for k in kappas],
        n_q=_take(controls, "controls", "n_q", int, 61),
        n_p=_take(controls, "controls", "n_p", int, 101),
        mc=mc,
        bootstrap=boot,
        es_search=es,
        output_dir=str(raw.get("output_dir", "out")),
    )
