"""Localized 2-D log-space lattices over (stock amount, bond amount).

Two branches share one shape: a solvent lattice over (log s, log b) with
b > 0, and a reflected insolvent lattice over (log s, log b') with
b' = -b > 0 representing debt states where trading has ceased.  Node
coordinates are equally spaced in log per axis.  Fields are interpolated
bilinearly in log coordinates with constant extrapolation beyond the
bounds; queries with s or |b| below the smallest node clamp to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["GridSpec", "StateGrid", "ValueField", "build_grid", "interpolate"]

SOLVENT = "solvent"
INSOLVENT = "insolvent"


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Node counts and positive localization bounds, log-uniform per axis."""

    n_s: int
    n_b: int
    s_min: float
    s_max: float
    b_min: float
    b_max: float

    def __post_init__(self):
        if not (_is_pow2(self.n_s) and _is_pow2(self.n_b)):
            raise ValueError(f"n_s and n_b must be powers of two, got {self.n_s} x {self.n_b}")
        if not 0.0 < self.s_min < self.s_max:
            raise ValueError(f"need 0 < s_min < s_max, got [{self.s_min}, {self.s_max}]")
        if not 0.0 < self.b_min < self.b_max:
            raise ValueError(f"need 0 < b_min < b_max, got [{self.b_min}, {self.b_max}]")

    def scaled(self, factor: int) -> "GridSpec":
        """Same bounds with node counts multiplied by ``factor``."""
        return GridSpec(self.n_s * factor, self.n_b * factor,
                        self.s_min, self.s_max, self.b_min, self.b_max)


@dataclass(frozen=True)
class StateGrid:
    """Realized lattice: log coordinates plus spacings.

    The insolvent branch reuses the b-axis nodes as debt magnitudes b',
    so both branches have shape (n_s, n_b).
    """

    spec: GridSpec
    log_s: np.ndarray = field(repr=False)
    log_b: np.ndarray = field(repr=False)

    @property
    def h_s(self) -> float:
        return float(self.log_s[1] - self.log_s[0]) if self.spec.n_s > 1 else 0.0

    @property
    def h_b(self) -> float:
        return float(self.log_b[1] - self.log_b[0]) if self.spec.n_b > 1 else 0.0

    @property
    def s(self) -> np.ndarray:
        return np.exp(self.log_s)

    @property
    def b(self) -> np.ndarray:
        return np.exp(self.log_b)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.spec.n_s, self.spec.n_b)

    def wealth_of(self, branch: str, i: int, j: int) -> tuple[float, float, float]:
        """(s, b, w) at node (i, j); on the insolvent branch s is clamped to
        zero and b is the negated debt magnitude, so w = -b'."""
        if branch == SOLVENT:
            s = float(self.s[i])
            b = float(self.b[j])
            return s, b, s + b
        if branch == INSOLVENT:
            bp = float(self.b[j])
            return 0.0, -bp, -bp
        raise ValueError(f"unknown branch {branch!r}")

    def node_wealths(self, branch: str) -> np.ndarray:
        """Wealth at every node of one branch, shape (n_s, n_b)."""
        if branch == SOLVENT:
            return self.s[:, None] + self.b[None, :]
        if branch == INSOLVENT:
            return np.broadcast_to(-self.b[None, :], self.shape).copy()
        raise ValueError(f"unknown branch {branch!r}")


@dataclass
class ValueField:
    """Values over both branches of a StateGrid at one time label."""

    grid: StateGrid
    solvent: np.ndarray
    insolvent: np.ndarray
    time_label: float = 0.0

    def __post_init__(self):
        if self.solvent.shape != self.grid.shape or self.insolvent.shape != self.grid.shape:
            raise ValueError(
                f"field shapes {self.solvent.shape}/{self.insolvent.shape} "
                f"do not match grid {self.grid.shape}"
            )

    def validate_finite(self):
        if not (np.all(np.isfinite(self.solvent)) and np.all(np.isfinite(self.insolvent))):
            raise ValueError("value field contains non-finite entries")

    @classmethod
    def constant(cls, grid: StateGrid, value: float, time_label: float = 0.0) -> "ValueField":
        return cls(grid, np.full(grid.shape, value), np.full(grid.shape, value), time_label)

    @classmethod
    def from_wealth_function(cls, grid: StateGrid, fn, time_label: float = 0.0) -> "ValueField":
        """Tabulate a function of total wealth on both branches."""
        return cls(
            grid,
            np.asarray(fn(grid.node_wealths(SOLVENT)), dtype=float),
            np.asarray(fn(grid.node_wealths(INSOLVENT)), dtype=float),
            time_label,
        )


def build_grid(spec: GridSpec) -> StateGrid:
    """Lattice with n_s x n_b solvent and n_s x n_b insolvent nodes."""
    log_s = np.linspace(np.log(spec.s_min), np.log(spec.s_max), spec.n_s)
    log_b = np.linspace(np.log(spec.b_min), np.log(spec.b_max), spec.n_b)
    return StateGrid(spec=spec, log_s=log_s, log_b=log_b)


def _bilinear(
    values: np.ndarray,
    log_x: np.ndarray,
    log_y: np.ndarray,
    qx: np.ndarray,
    qy: np.ndarray,
) -> np.ndarray:
    """Bilinear interpolation on a log-uniform lattice with coordinate
    clipping (constant extrapolation beyond the bounds)."""
    nx, ny = values.shape
    hx = (log_x[-1] - log_x[0]) / (nx - 1) if nx > 1 else 1.0
    hy = (log_y[-1] - log_y[0]) / (ny - 1) if ny > 1 else 1.0
    fx = np.clip((qx - log_x[0]) / hx, 0.0, nx - 1.0)
    fy = np.clip((qy - log_y[0]) / hy, 0.0, ny - 1.0)
    ix = np.minimum(fx.astype(np.int64), nx - 2) if nx > 1 else np.zeros_like(fx, dtype=np.int64)
    iy = np.minimum(fy.astype(np.int64), ny - 2) if ny > 1 else np.zeros_like(fy, dtype=np.int64)
    tx = fx - ix
    ty = fy - iy
    v00 = values[ix, iy]
    if nx > 1 and ny > 1:
        v10 = values[ix + 1, iy]
        v01 = values[ix, iy + 1]
        v11 = values[ix + 1, iy + 1]
        return (
            v00 * (1 - tx) * (1 - ty)
            + v10 * tx * (1 - ty)
            + v01 * (1 - tx) * ty
            + v11 * tx * ty
        )
    if nx > 1:
        return v00 * (1 - tx) + values[ix + 1, iy] * tx
    if ny > 1:
        return v00 * (1 - ty) + values[ix, iy + 1] * ty
    return v00


def interpolate(field: ValueField, s, b) -> np.ndarray:
    """Evaluate a field at (s, b) points, b signed.

    b > 0 queries the solvent branch at (log s, log b); b < 0 the insolvent
    branch at (log s, log(-b)).  b == 0 is routed to the solvent branch at
    the smallest bond node (callers that mean a zero-bond or zero-debt state
    clamp the sign upstream).  s <= 0 clamps to the smallest stock node.
    Exact at nodes; constant extrapolation outside the bounds.
    """
    s_arr = np.asarray(s, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(~np.isfinite(s_arr)) or np.any(~np.isfinite(b_arr)):
        raise ValueError("interpolate: non-finite query coordinates")
    scalar = s_arr.ndim == 0 and b_arr.ndim == 0
    s_arr, b_arr = np.broadcast_arrays(np.atleast_1d(s_arr), np.atleast_1d(b_arr))
    grid = field.grid
    log_qs = np.log(np.clip(s_arr, grid.spec.s_min, None))
    log_qb = np.log(np.clip(np.abs(b_arr), grid.spec.b_min, None))
    out = np.empty(s_arr.shape, dtype=float)
    neg = b_arr < 0.0
    if np.any(~neg):
        out[~neg] = _bilinear(field.solvent, grid.log_s, grid.log_b,
                              log_qs[~neg], log_qb[~neg])
    if np.any(neg):
        out[neg] = _bilinear(field.insolvent, grid.log_s, grid.log_b,
                             log_qs[neg], log_qb[neg])
    return float(out[0]) if scalar else out
