"""Bivariate Kou jump-diffusion market model for a stock and a bond index.

Both indexes follow exponential jump-diffusions with double-exponential
(Kou) log-jumps.  The diffusive parts are correlated; the jump processes
of the two assets are mutually independent.  A negative bond balance is
interpreted as debt and accrues an extra borrowing spread on its drift.

All rates are per year, all amounts are real (inflation adjusted).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "KouJumpParams",
    "MarketParams",
    "LogIncrement",
    "jump_compensator",
    "jump_mean_log",
    "jump_second_moment_log",
    "jump_log_char",
    "joint_char",
    "log_drift",
    "increment_moments",
    "sample_increment",
]

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class KouJumpParams:
    """Parameters of one asset: drift, volatility and Kou jump law.

    ``mu`` is the uncompensated drift, i.e. ``E[dX/X] = mu dt`` including
    the jump contribution.  Log-jumps ``y`` have density

        f(y) = u * eta1 * exp(-eta1 * y)      for y >= 0
             + (1-u) * eta2 * exp(+eta2 * y)  for y <  0

    ``eta1 > 1`` is required so the mean jump multiplier ``E[e^y]`` is finite.
    """

    mu: float
    sigma: float
    lam: float
    u: float
    eta1: float
    eta2: float

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 <= self.u <= 1.0:
            raise ValueError(f"u must be in [0, 1], got {self.u}")
        if self.eta1 <= 1.0:
            raise ValueError(f"eta1 must be > 1 (finite mean jump), got {self.eta1}")
        if self.eta2 <= 0.0:
            raise ValueError(f"eta2 must be > 0, got {self.eta2}")


@dataclass(frozen=True)
class MarketParams:
    """Stock and bond dynamics plus diffusion correlation and borrowing spread.

    ``mu_c_b`` is the extra drift a negative (borrowed) bond balance accrues:
    debt compounds at the bond return plus this spread.
    """

    stock: KouJumpParams
    bond: KouJumpParams
    rho_sb: float
    mu_c_b: float

    def __post_init__(self):
        if abs(self.rho_sb) > 1.0:
            raise ValueError(f"|rho_sb| must be <= 1, got {self.rho_sb}")
        if self.mu_c_b < 0.0:
            raise ValueError(f"mu_c_b must be >= 0, got {self.mu_c_b}")


@dataclass(frozen=True)
class LogIncrement:
    """One period's change in (log stock amount, log bond amount)."""

    ds: ArrayLike
    db: ArrayLike


def jump_compensator(p: KouJumpParams) -> float:
    """Mean relative jump size ``E[xi - 1]`` where ``xi = e^y``.

    Closed form for the Kou density:
    ``u*eta1/(eta1-1) + (1-u)*eta2/(eta2+1) - 1``.
    """
    if p.eta1 <= 1.0:
        raise ValueError("eta1 <= 1: mean jump size diverges")
    if p.eta2 <= 0.0:
        raise ValueError("eta2 <= 0: invalid down-jump decay")
    return p.u * p.eta1 / (p.eta1 - 1.0) + (1.0 - p.u) * p.eta2 / (p.eta2 + 1.0) - 1.0


def jump_mean_log(p: KouJumpParams) -> float:
    """``E[y]`` of the log-jump distribution."""
    return p.u / p.eta1 - (1.0 - p.u) / p.eta2


def jump_second_moment_log(p: KouJumpParams) -> float:
    """``E[y^2]`` of the log-jump distribution."""
    return 2.0 * p.u / p.eta1**2 + 2.0 * (1.0 - p.u) / p.eta2**2


def jump_log_char(p: KouJumpParams, omega: ArrayLike) -> complex:
    """Characteristic function ``E[exp(i omega y)]`` of the log-jump density.

    Equals ``u*eta1/(eta1 - i*omega) + (1-u)*eta2/(eta2 + i*omega)``;
    exactly 1 at ``omega = 0``.
    """
    w = np.asarray(omega, dtype=complex)
    phi = p.u * p.eta1 / (p.eta1 - 1j * w) + (1.0 - p.u) * p.eta2 / (p.eta2 + 1j * w)
    if np.ndim(omega) == 0:
        return complex(phi)
    return phi


def log_drift(p: KouJumpParams, extra_drift: float = 0.0) -> float:
    """Drift of the log amount: ``mu - lam*gamma - sigma^2/2`` (plus any spread)."""
    return p.mu + extra_drift - p.lam * jump_compensator(p) - 0.5 * p.sigma**2


def joint_char(
    m: MarketParams,
    omega_s: ArrayLike,
    omega_b: ArrayLike,
    dt: float,
    insolvent: bool = False,
) -> complex:
    """Joint characteristic function of (d log S, d log B) over ``dt`` years.

    Levy-Khintchine exponent for correlated diffusions with independent
    compound-Poisson Kou jumps per asset:

        log phi = dt * [ i*w_s*a_s + i*w_b*a_b
                         - (sig_s^2 w_s^2 + 2 rho sig_s sig_b w_s w_b + sig_b^2 w_b^2)/2
                         + lam_s*(phi_s(w_s) - 1) + lam_b*(phi_b(w_b) - 1) ]

    with ``a_x = mu_x - lam_x*gamma_x - sig_x^2/2``.  When ``insolvent`` is
    set, the bond drift uses ``mu_b + mu_c_b`` (debt accrues the spread; the
    diffusive and jump terms are unchanged).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    ws = np.asarray(omega_s, dtype=complex)
    wb = np.asarray(omega_b, dtype=complex)
    s, b = m.stock, m.bond
    a_s = log_drift(s)
    a_b = log_drift(b, extra_drift=m.mu_c_b if insolvent else 0.0)
    quad = 0.5 * (
        s.sigma**2 * ws**2
        + 2.0 * m.rho_sb * s.sigma * b.sigma * ws * wb
        + b.sigma**2 * wb**2
    )
    exponent = (
        1j * ws * a_s
        + 1j * wb * a_b
        - quad
        + s.lam * (jump_log_char(s, ws) - 1.0)
        + b.lam * (jump_log_char(b, wb) - 1.0)
    )
    phi = np.exp(dt * exponent)
    if np.ndim(omega_s) == 0 and np.ndim(omega_b) == 0:
        return complex(phi)
    return phi


def increment_moments(m: MarketParams, dt: float, insolvent: bool = False):
    """Analytic mean vector and covariance matrix of (d log S, d log B).

    mean_x = (a_x + lam_x * E[y_x]) * dt
    var_x  = (sig_x^2 + lam_x * E[y_x^2]) * dt
    cov    = rho * sig_s * sig_b * dt   (jumps independent across assets)
    """
    s, b = m.stock, m.bond
    mean = np.array(
        [
            (log_drift(s) + s.lam * jump_mean_log(s)) * dt,
            (log_drift(b, extra_drift=m.mu_c_b if insolvent else 0.0)
             + b.lam * jump_mean_log(b)) * dt,
        ]
    )
    cov = np.array(
        [
            [
                (s.sigma**2 + s.lam * jump_second_moment_log(s)) * dt,
                m.rho_sb * s.sigma * b.sigma * dt,
            ],
            [
                m.rho_sb * s.sigma * b.sigma * dt,
                (b.sigma**2 + b.lam * jump_second_moment_log(b)) * dt,
            ],
        ]
    )
    return mean, cov


def _sample_kou_jumps(
    p: KouJumpParams, dt: float, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Per-path sums of a Poisson(lam*dt) number of Kou log-jumps."""
    if p.lam == 0.0:
        return np.zeros(size)
    counts = rng.poisson(p.lam * dt, size=size)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(size)
    up = rng.random(total) < p.u
    y = np.where(
        up,
        rng.exponential(1.0 / p.eta1, size=total),
        -rng.exponential(1.0 / p.eta2, size=total),
    )
    owner = np.repeat(np.arange(size), counts)
    return np.bincount(owner, weights=y, minlength=size)


def sample_increment(
    m: MarketParams,
    dt: float,
    rng: np.random.Generator,
    insolvent: bool = False,
    size: int | None = None,
) -> LogIncrement:
    """Exact simulation of (d log S, d log B) over ``dt`` years.

    Correlated Gaussian diffusion plus per-asset compound-Poisson Kou
    log-jumps.  Deterministic given the generator state.  With ``size``
    given, returns arrays of that many independent increments.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = 1 if size is None else int(size)
    s, b = m.stock, m.bond
    z = rng.standard_normal((2, n))
    zs = z[0]
    zb = m.rho_sb * z[0] + np.sqrt(1.0 - m.rho_sb**2) * z[1]
    root_dt = np.sqrt(dt)
    ds = log_drift(s) * dt + s.sigma * root_dt * zs + _sample_kou_jumps(s, dt, rng, n)
    db = (
        log_drift(b, extra_drift=m.mu_c_b if insolvent else 0.0) * dt
        + b.sigma * root_dt * zb
        + _sample_kou_jumps(b, dt, rng, n)
    )
    if size is None:
        return LogIncrement(ds=float(ds[0]), db=float(db[0]))
    return LogIncrement(ds=ds, db=db)
