"""One-period transition kernels of the joint log-return process.

Between rebalancing dates the value field satisfies a two-dimensional
partial integro-differential equation; because the log-increment law is
level independent, the backward step over one interval is exactly a
convolution with the increment density (a Green's function).  The kernel
is obtained by sampling the joint characteristic function on the conjugate
frequency lattice of the zero-padded grid and inverting with an FFT.
Small negative ringing from the discrete inversion is clipped at zero and
the kernel renormalized to unit mass, which keeps the backward operator
monotone.  The insolvent branch uses a one-dimensional kernel in log debt
with the borrowing spread added to the drift and no stock exposure.

Fields are extended by edge replication before convolving, implementing
the lattice's constant-extrapolation boundary while the padding prevents
circular wrap-around.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .grids import GridSpec, StateGrid, ValueField, build_grid
from .market import MarketParams, increment_moments, joint_char

__all__ = ["GreensFunction", "build_green", "advance", "kernel_to_csv"]

# Per-side tail mass dropped when cropping a kernel to its effective support.
_SUPPORT_TAIL = 2.5e-11
_MASS_DEFECT_TOL = 1e-6
# Gibbs filtering defaults: Gaussian mollifier stddev in *inversion-lattice*
# cells, and the relative floor (fraction of the peak weight) below which
# residual ringing is zeroed.
DEFAULT_SMOOTHING = 0.5
DEFAULT_RING_FLOOR = 1e-10
# The inversion lattice is refined per axis until its spacing resolves half
# the increment's total standard deviation, so the characteristic function
# has decayed at the Nyquist frequency and the inversion is ringing free.
_MAX_OVERSAMPLE = 32


class KernelResolutionError(RuntimeError):
    """Raised when the inverted kernel's mass defect exceeds tolerance."""


def _invert_char(phi_on_mesh: np.ndarray) -> np.ndarray:
    """Discrete density from characteristic-function samples.

    With ``phi[m] = phi(2*pi*fftfreq(N, h)[m])`` the probability of offset
    ``k*h`` is ``fft(phi)[k] / N`` (real up to roundoff), in fft index order.
    """
    n_tot = phi_on_mesh.size
    g = sfft.fftn(phi_on_mesh) / n_tot
    return np.real(g)


def _effective_window(marginal: np.ndarray, center: int) -> tuple[int, int]:
    """Smallest index window around ``center`` whose complement carries
    at most _SUPPORT_TAIL mass per side."""
    csum = np.cumsum(marginal)
    total = csum[-1]
    lo_candidates = np.nonzero(csum > _SUPPORT_TAIL * total)[0]
    lo = int(lo_candidates[0]) if lo_candidates.size else 0
    hi_candidates = np.nonzero((total - csum) > _SUPPORT_TAIL * total)[0]
    hi = int(hi_candidates[-1] + 1) if hi_candidates.size else marginal.size - 1
    lo = min(lo, center)
    hi = max(hi, center)
    return lo, hi


@dataclass
class GreensFunction:
    """Cleaned transition kernels for one rebalancing interval.

    ``kernel[k, l]`` is the probability of a (k - origin_s, l - origin_b)
    node offset in (log s, log b).  ``insolvent_kernel`` is the analogous
    1-D law of the log debt offset.  ``padding`` holds the per-axis
    (before, after) field extension the solvent convolution needs.
    """

    dt: float
    h_s: float
    h_b: float
    kernel: np.ndarray = field(repr=False)
    origin: tuple[int, int]
    insolvent_kernel: np.ndarray = field(repr=False)
    insolvent_origin: int
    padding: tuple[tuple[int, int], tuple[int, int]]
    insolvent_padding: tuple[int, int]
    clipped_mass: float
    insolvent_clipped_mass: float
    _conv_cache: dict = field(default_factory=dict, repr=False)

    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Log-return offsets (delta log s, delta log b) of the kernel nodes."""
        ks = (np.arange(self.kernel.shape[0]) - self.origin[0]) * self.h_s
        kb = (np.arange(self.kernel.shape[1]) - self.origin[1]) * self.h_b
        return ks, kb

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean vector and covariance matrix of the 2-D kernel."""
        ks, kb = self.offsets()
        ms = float(np.sum(self.kernel.sum(axis=1) * ks))
        mb = float(np.sum(self.kernel.sum(axis=0) * kb))
        dks = ks - ms
        dkb = kb - mb
        vs = float(np.sum(self.kernel.sum(axis=1) * dks**2))
        vb = float(np.sum(self.kernel.sum(axis=0) * dkb**2))
        cov = float(dks @ self.kernel @ dkb)
        return np.array([ms, mb]), np.array([[vs, cov], [cov, vb]])

    def insolvent_moments(self) -> tuple[float, float]:
        kb = (np.arange(self.insolvent_kernel.size) - self.insolvent_origin) * self.h_b
        m = float(np.sum(self.insolvent_kernel * kb))
        v = float(np.sum(self.insolvent_kernel * (kb - m) ** 2))
        return m, v


def _clean_kernel_1d(raw: np.ndarray, ring_floor: float) -> tuple[np.ndarray, int, float]:
    n = raw.size
    defect = abs(float(raw.sum()) - 1.0)
    if defect > _MASS_DEFECT_TOL:
        raise KernelResolutionError(
            f"kernel mass defect {defect:.3e} before renormalization exceeds "
            f"{_MASS_DEFECT_TOL:.0e}; increase grid resolution"
        )
    clipped_mass = float(-raw[raw < 0.0].sum())
    ker = np.where(raw < ring_floor * raw.max(), 0.0, raw)
    center = n // 2
    lo, hi = _effective_window(ker, center)
    ker = ker[lo : hi + 1]
    ker = ker / ker.sum()
    return ker, center - lo, clipped_mass


def _clean_kernel_2d(
    raw: np.ndarray, ring_floor: float
) -> tuple[np.ndarray, tuple[int, int], float]:
    defect = abs(float(raw.sum()) - 1.0)
    if defect > _MASS_DEFECT_TOL:
        raise KernelResolutionError(
            f"kernel mass defect {defect:.3e} before renormalization exceeds "
            f"{_MASS_DEFECT_TOL:.0e}; increase grid resolution"
        )
    clipped_mass = float(-raw[raw < 0.0].sum())
    ker = np.where(raw < ring_floor * raw.max(), 0.0, raw)
    cs, cb = raw.shape[0] // 2, raw.shape[1] // 2
    lo_s, hi_s = _effective_window(ker.sum(axis=1), cs)
    lo_b, hi_b = _effective_window(ker.sum(axis=0), cb)
    ker = ker[lo_s : hi_s + 1, lo_b : hi_b + 1]
    ker = ker / ker.sum()
    return ker, (cs - lo_s, cb - lo_b), clipped_mass


def _oversample_factor(h: float, sigma_total: float) -> int:
    """Power-of-two refinement making the inversion spacing <= sigma/2."""
    if sigma_total <= 0.0:
        return _MAX_OVERSAMPLE
    r = 1
    while h / r > 0.5 * sigma_total and r < _MAX_OVERSAMPLE:
        r *= 2
    return r


def _aggregate_axis(fine: np.ndarray, r: int, axis: int) -> np.ndarray:
    """Collapse a refined axis onto the grid lattice with hat weights.

    Fine node at coarse position k + j/r contributes (1 - j/r) of its mass
    to node k and j/r to node k + 1, so the aggregated kernel keeps the
    fine kernel's mean exactly and stays non-negative.
    """
    if r == 1:
        return fine
    fine = np.moveaxis(fine, axis, -1)
    n_coarse = fine.shape[-1] // r
    blocks = fine.reshape(fine.shape[:-1] + (n_coarse, r))
    frac = np.arange(r) / r
    low = (blocks * (1.0 - frac)).sum(axis=-1)
    high = (blocks * frac).sum(axis=-1)
    out = np.zeros(fine.shape[:-1] + (n_coarse + 1,))
    out[..., :n_coarse] += low
    out[..., 1:] += high
    # drop the overflow node past the domain edge (carries ~0 mass)
    out = out[..., :n_coarse]
    return np.moveaxis(out, -1, axis)


def build_green(
    m: MarketParams,
    spec: GridSpec,
    dt: float,
    smoothing: float = DEFAULT_SMOOTHING,
    ring_floor: float = DEFAULT_RING_FLOOR,
) -> GreensFunction:
    """Transition kernels for the grid spacing implied by ``spec``.

    The characteristic function is sampled on the conjugate frequency
    lattice of the zero-padded grid, refined per axis until the spacing
    resolves the increment law (a narrow bond kernel would otherwise ring
    across the whole axis), and inverted with an FFT.  ``smoothing`` is
    the stddev, in inversion-lattice cells, of a Gaussian mollifier that
    regularizes degenerate (near-deterministic) components; residual
    ringing below ``ring_floor`` of the peak is zeroed along with negative
    entries.  The refined-lattice mass is then collapsed onto the grid
    lattice with mean-preserving hat weights and renormalized.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    grid = build_grid(spec)
    h_s, h_b = grid.h_s, grid.h_b
    _, cov = increment_moments(m, dt)
    r_s = _oversample_factor(h_s, float(np.sqrt(cov[0, 0])))
    r_b = _oversample_factor(h_b, float(np.sqrt(cov[1, 1])))
    n_s = 2 * spec.n_s * r_s
    n_b = 2 * spec.n_b * r_b

    w_s = 2.0 * np.pi * sfft.fftfreq(n_s, d=h_s / r_s)
    w_b = 2.0 * np.pi * sfft.fftfreq(n_b, d=h_b / r_b)
    phi = joint_char(m, w_s[:, None], w_b[None, :], dt, insolvent=False)
    if smoothing > 0.0:
        moll = np.exp(
            -0.5 * (smoothing * (h_s / r_s) * w_s[:, None]) ** 2
            - 0.5 * (smoothing * (h_b / r_b) * w_b[None, :]) ** 2
        )
        phi = phi * moll
    raw = sfft.fftshift(_invert_char(phi))
    raw = _aggregate_axis(_aggregate_axis(raw, r_s, 0), r_b, 1)
    kernel, origin, clipped = _clean_kernel_2d(raw, ring_floor)

    phi_ins = np.asarray(joint_char(m, 0.0, w_b, dt, insolvent=True))
    if smoothing > 0.0:
        phi_ins = phi_ins * np.exp(-0.5 * (smoothing * (h_b / r_b) * w_b) ** 2)
    raw_ins = _aggregate_axis(sfft.fftshift(_invert_char(phi_ins)), r_b, 0)
    ins_kernel, ins_origin, ins_clipped = _clean_kernel_1d(raw_ins, ring_floor)

    pad_s = (origin[0], kernel.shape[0] - 1 - origin[0])
    pad_b = (origin[1], kernel.shape[1] - 1 - origin[1])
    ins_pad = (ins_origin, ins_kernel.size - 1 - ins_origin)
    return GreensFunction(
        dt=dt,
        h_s=h_s,
        h_b=h_b,
        kernel=kernel,
        origin=origin,
        insolvent_kernel=ins_kernel,
        insolvent_origin=ins_origin,
        padding=(pad_s, pad_b),
        insolvent_padding=ins_pad,
        clipped_mass=clipped,
        insolvent_clipped_mass=ins_clipped,
    )


def _conv_plan(g: GreensFunction, shape: tuple[int, int]):
    """Cached rFFTs of the kernels zero-padded to the fast working shapes."""
    key = shape
    plan = g._conv_cache.get(key)
    if plan is not None:
        return plan
    (ps_lo, ps_hi), (pb_lo, pb_hi) = g.padding
    full_s = shape[0] + ps_lo + ps_hi + g.kernel.shape[0] - 1
    full_b = shape[1] + pb_lo + pb_hi + g.kernel.shape[1] - 1
    fs = int(sfft.next_fast_len(full_s, real=True))
    fb = int(sfft.next_fast_len(full_b, real=True))
    ker_fft = sfft.rfft2(g.kernel[::-1, ::-1], s=(fs, fb))

    ib_lo, ib_hi = g.insolvent_padding
    full_ib = shape[1] + ib_lo + ib_hi + g.insolvent_kernel.size - 1
    fib = int(sfft.next_fast_len(full_ib, real=True))
    ins_fft = sfft.rfft(g.insolvent_kernel[::-1], n=fib)
    plan = (fs, fb, ker_fft, fib, ins_fft)
    g._conv_cache[key] = plan
    return plan


def advance(field_in: ValueField, g: GreensFunction) -> ValueField:
    """Conditional expectation of a field one rebalancing interval earlier.

    out(x) = sum_k kernel[k] * in(x + k) on the solvent branch, with the
    1-D debt kernel on the insolvent branch.  Fields are edge-replicated
    over the kernel support before the FFT convolution.
    """
    grid = field_in.grid
    n_s, n_b = grid.shape
    plan_fs, plan_fb, ker_fft, plan_fib, ins_fft = _conv_plan(g, grid.shape)
    (ps_lo, ps_hi), (pb_lo, pb_hi) = g.padding
    ks, kb = g.kernel.shape

    padded = np.pad(field_in.solvent, ((ps_lo, ps_hi), (pb_lo, pb_hi)), mode="edge")
    spec_f = sfft.rfft2(padded, s=(plan_fs, plan_fb))
    conv = sfft.irfft2(spec_f * ker_fft, s=(plan_fs, plan_fb))
    # 'valid' window of the linear convolution with the flipped kernel
    out_solvent = conv[ks - 1 : ks - 1 + n_s, kb - 1 : kb - 1 + n_b]

    ib_lo, ib_hi = g.insolvent_padding
    kib = g.insolvent_kernel.size
    padded_ins = np.pad(field_in.insolvent, ((0, 0), (ib_lo, ib_hi)), mode="edge")
    spec_i = sfft.rfft(padded_ins, n=plan_fib, axis=1)
    conv_i = sfft.irfft(spec_i * ins_fft[None, :], n=plan_fib, axis=1)
    out_insolvent = conv_i[:, kib - 1 : kib - 1 + n_b]

    return ValueField(
        grid=grid,
        solvent=np.ascontiguousarray(out_solvent),
        insolvent=np.ascontiguousarray(out_insolvent),
        time_label=field_in.time_label - g.dt,
    )


def advance_many(fields: np.ndarray, branch_ins: np.ndarray, grid: StateGrid,
                 g: GreensFunction) -> tuple[np.ndarray, np.ndarray]:
    """Batched advance of stacked (k, n_s, n_b) solvent/insolvent arrays."""
    n_s, n_b = grid.shape
    plan_fs, plan_fb, ker_fft, plan_fib, ins_fft = _conv_plan(g, grid.shape)
    (ps_lo, ps_hi), (pb_lo, pb_hi) = g.padding
    ks, kb = g.kernel.shape

    padded = np.pad(fields, ((0, 0), (ps_lo, ps_hi), (pb_lo, pb_hi)), mode="edge")
    spec_f = sfft.rfft2(padded, s=(plan_fs, plan_fb), axes=(-2, -1))
    conv = sfft.irfft2(spec_f * ker_fft[None], s=(plan_fs, plan_fb), axes=(-2, -1))
    out_solvent = np.ascontiguousarray(conv[:, ks - 1 : ks - 1 + n_s, kb - 1 : kb - 1 + n_b])

    ib_lo, ib_hi = g.insolvent_padding
    kib = g.insolvent_kernel.size
    padded_i = np.pad(branch_ins, ((0, 0), (0, 0), (ib_lo, ib_hi)), mode="edge")
    spec_i = sfft.rfft(padded_i, n=plan_fib, axis=-1)
    conv_i = sfft.irfft(spec_i * ins_fft, n=plan_fib, axis=-1)
    out_insolvent = np.ascontiguousarray(conv_i[:, :, kib - 1 : kib - 1 + n_b])
    return out_solvent, out_insolvent


def kernel_to_csv(g: GreensFunction, path: str) -> None:
    """Diagnostic dump: one row per kernel node (offsets and weight)."""
    ks, kb = g.offsets()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dlog_s", "dlog_b", "weight"])
        for i, xs in enumerate(ks):
            for j, xb in enumerate(kb):
                w = g.kernel[i, j]
                if w > 0.0:
                    writer.writerow([f"{xs:.10g}", f"{xb:.10g}", f"{w:.12e}"])
        writer.writerow([])
        writer.writerow(["insolvent_dlog_b", "", "weight"])
        kbi = (np.arange(g.insolvent_kernel.size) - g.insolvent_origin) * g.h_b
        for xb, w in zip(kbi, g.insolvent_kernel):
            if w > 0.0:
                writer.writerow([f"{xb:.10g}", "", f"{w:.12e}"])
