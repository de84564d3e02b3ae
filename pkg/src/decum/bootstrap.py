"""Stationary block bootstrap of historical monthly return series.

Resampling follows the stationary bootstrap of Politis and Romano: each
month, with probability 1/b the sample jumps to a uniformly random index
(starting a new block), otherwise it continues with the successor index,
wrapping circularly at the series end.  Block lengths are therefore
geometric, Pr(b = k) = (1 - v)^(k-1) v with v = 1/b, so b is the expected
blocksize.  Both return columns are drawn at identical indexes when
``paired`` (the default), preserving the cross-asset dependence.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime
from typing import Iterator, Optional

import numpy as np

__all__ = [
    "ReturnSeries",
    "BootstrapSpec",
    "ReturnsFormatError",
    "bootstrap_paths",
    "stationary_indices",
    "realized_block_lengths",
]


class ReturnsFormatError(ValueError):
    """Malformed returns CSV."""


RETURNS_HEADER = ["date", "stock_real_return", "bond_real_return"]


@dataclass(frozen=True)
class ReturnSeries:
    """Monthly real total returns of the stock and bond indexes."""

    dates: np.ndarray
    stock: np.ndarray
    bond: np.ndarray
    label: str = ""

    def __post_init__(self):
        n = self.dates.size
        if self.stock.size != n or self.bond.size != n:
            raise ValueError("date and return columns have different lengths")
        if n == 0:
            raise ValueError("empty return series")
        if n > 1 and not np.all(self.dates[1:] > self.dates[:-1]):
            raise ValueError("dates must be strictly increasing")
        if np.any(self.stock <= -1.0) or np.any(self.bond <= -1.0):
            raise ValueError("simple returns must exceed -1")

    def __len__(self) -> int:
        return self.dates.size

    @classmethod
    def from_arrays(cls, stock, bond, start="1926-01", label="") -> "ReturnSeries":
        stock = np.asarray(stock, dtype=float)
        start_dt = np.datetime64(start, "M")
        dates = start_dt + np.arange(stock.size)
        return cls(dates=dates, stock=stock, bond=np.asarray(bond, dtype=float), label=label)

    @classmethod
    def from_csv(cls, path: str, label: Optional[str] = None) -> "ReturnSeries":
        """Load ``date,stock_real_return,bond_real_return`` (ISO dates,
        decimal simple returns per month)."""
        dates, stock, bond = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ReturnsFormatError(f"{path}: empty file") from None
            if [h.strip() for h in header] != RETURNS_HEADER:
                raise ReturnsFormatError(
                    f"{path}: header row must be {','.join(RETURNS_HEADER)!r}, "
                    f"got {','.join(header)!r}"
                )
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 3:
                    raise ReturnsFormatError(f"{path}: row {lineno}: expected 3 fields")
                try:
                    dates.append(np.datetime64(datetime.strptime(
                        row[0].strip(), "%Y-%m-%d").date(), "M"))
                except ValueError:
                    # allow YYYY-MM as well
                    try:
                        dates.append(np.datetime64(row[0].strip(), "M"))
                    except ValueError as exc:
                        raise ReturnsFormatError(
                            f"{path}: row {lineno}: bad date {row[0]!r}") from exc
                try:
                    stock.append(float(row[1]))
                    bond.append(float(row[2]))
                except ValueError as exc:
                    raise ReturnsFormatError(
                        f"{path}: row {lineno}: bad return value") from exc
        try:
            return cls(
                dates=np.array(dates),
                stock=np.array(stock),
                bond=np.array(bond),
                label=label if label is not None else path,
            )
        except ValueError as exc:
            raise ReturnsFormatError(f"{path}: {exc}") from exc

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RETURNS_HEADER)
            for d, s, b in zip(self.dates, self.stock, self.bond):
                writer.writerow([f"{d}-01", f"{s:.10g}", f"{b:.10g}"])


@dataclass(frozen=True)
class BootstrapSpec:
    """Resampling configuration: expected blocksize in months, paired
    sampling of the two columns, path count and seed."""

    expected_blocksize: float = 24.0
    paired: bool = True
    n_paths: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.expected_blocksize < 1.0:
            raise ValueError("expected blocksize must be at least one month")
        if self.n_paths < 1:
            raise ValueError("need at least one path")


def stationary_indices(
    rng: np.random.Generator,
    n_obs: int,
    n_months: int,
    n_paths: int,
    expected_blocksize: float,
) -> np.ndarray:
    """Index matrix (n_paths, n_months) of the stationary bootstrap chain."""
    v = 1.0 / float(expected_blocksize)
    restart = rng.random((n_paths, n_months)) < v
    restart[:, 0] = True
    starts = rng.integers(0, n_obs, size=(n_paths, n_months))
    tgrid = np.arange(n_months)
    last_restart = np.maximum.accumulate(
        np.where(restart, tgrid[None, :], -1), axis=1
    )
    start_used = np.take_along_axis(starts, last_restart, axis=1)
    return (start_used + (tgrid[None, :] - last_restart)) % n_obs


def realized_block_lengths(
    rng: np.random.Generator, expected_blocksize: float, n_months: int
) -> np.ndarray:
    """Lengths of the completed blocks in one long resampling chain.

    Gaps between successive block starts are geometric with the configured
    mean; the censored final block is dropped.
    """
    v = 1.0 / float(expected_blocksize)
    restart = rng.random(n_months) < v
    restart[0] = True
    positions = np.flatnonzero(restart)
    return np.diff(positions)


def bootstrap_paths(
    series: ReturnSeries,
    spec: BootstrapSpec,
    horizon: float,
) -> Iterator[np.ndarray]:
    """Yield resampled (n_months, 2) return paths, deterministic per seed.

    Columns are (stock, bond) simple monthly returns.  Paired sampling uses
    one index chain for both columns; unpaired uses independent chains.
    """
    n_months = int(round(horizon * 12.0))
    if abs(n_months - horizon * 12.0) > 1e-9:
        raise ValueError(f"horizon {horizon} is not a whole number of months")
    if len(series) < 2:
        raise ValueError("return series too short to resample")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    batch = 4096
    produced = 0
    while produced < spec.n_paths:
        n = min(batch, spec.n_paths - produced)
        idx_s = stationary_indices(rng, len(series), n_months, n, spec.expected_blocksize)
        idx_b = idx_s if spec.paired else stationary_indices(
            rng, len(series), n_months, n, spec.expected_blocksize
        )
        stock = series.stock[idx_s]
        bond = series.bond[idx_b]
        for k in range(n):
            yield np.column_stack([stock[k], bond[k]])
        produced += n


def yearly_growth_factors(
    series: ReturnSeries,
    rng: np.random.Generator,
    n_paths: int,
    n_steps: int,
    months_per_step: int,
    expected_blocksize: float,
    paired: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step compounded gross returns (n_paths, n_steps) for both assets."""
    n_months = n_steps * months_per_step
    idx_s = stationary_indices(rng, len(series), n_months, n_paths, expected_blocksize)
    idx_b = idx_s if paired else stationary_indices(
        rng, len(series), n_months, n_paths, expected_blocksize
    )
    gs = (1.0 + series.stock[idx_s]).reshape(n_paths, n_steps, months_per_step).prod(axis=2)
    gb = (1.0 + series.bond[idx_b]).reshape(n_paths, n_steps, months_per_step).prod(axis=2)
    return gs, gb
