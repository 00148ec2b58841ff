"""Differentiable reconstruction-from-motion.

A heatmap at time t and a per-cell offset field predict the heatmap at
time t+1: every output cell j accumulates x_i * W(||j - (i + delta_i)||)
over source cells i, where W is a logistic weight that decays with
distance. The production path restricts i to a square window centered
on j so memory stays independent of grid size; the dense path is the
O(N^2) oracle used for verification.

Bit-reproducibility: each output cell accumulates its window's
contributions in row-major source order regardless of how the work is
batched, so results are identical across runs and worker counts.
Sources with x_i == 0 contribute exactly +0.0 and may be skipped
without changing any bit of the result.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import Heatmap, OffsetField
from .errors import DimensionMismatch

logger = logging.getLogger(__name__)

# The exponent of the weight function is clamped to [-60, 60] before
# exponentiation; for l >= 0 only the upper clamp is reachable.
EXP_CLAMP = 60.0
_W_SATURATED = 1.0 / (1.0 + math.exp(EXP_CLAMP))


@dataclass(frozen=True)
class ReconstructionConfig:
    """Decay speed and sliding-window size of the reconstruction operator."""

    lambda_r: float
    window_cells: int = 59

    def __post_init__(self):
        if not (self.lambda_r > 0):
            raise ValueError("lambda_r must be positive")
        w = int(self.window_cells)
        if w < 3 or w % 2 == 0:
            raise ValueError("window_cells must be odd and >= 3")

    @property
    def window_radius(self) -> int:
        return (self.window_cells - 1) // 2


@dataclass(frozen=True)
class WarpGradients:
    """Gradients of a scalar loss through the reconstruction operator."""

    d_heatmap: np.ndarray
    d_offset_x: np.ndarray
    d_offset_y: np.ndarray


def weight(l, lambda_r: float):
    """Distance weight W(l) = 1 / (1 + exp(4 * lambda_r * l - 10))."""
    t = np.clip(4.0 * lambda_r * np.asarray(l, dtype=np.float64) - 10.0, -EXP_CLAMP, EXP_CLAMP)
    out = 1.0 / (1.0 + np.exp(t))
    if np.ndim(l) == 0:
        return float(out)
    return out


def _weights_from_l(l: np.ndarray, lambda_r: float) -> np.ndarray:
    """W evaluated from distances; shared by every reconstruction path.

    Distances at or beyond the exponent clamp evaluate to the saturated
    constant; a slightly padded cutoff plus an explicit clip keeps the
    masked shortcut bitwise identical to clipping everywhere.
    """
    lam4 = 4.0 * lambda_r
    cut = 70.0 / lam4 + 1e-9
    near = l < cut
    n_near = int(np.count_nonzero(near))
    if n_near == l.size:
        t = l * lam4
        t -= 10.0
        np.minimum(t, EXP_CLAMP, out=t)
        np.exp(t, out=t)
        t += 1.0
        np.reciprocal(t, out=t)
        return t
    out = np.full(l.shape, _W_SATURATED)
    if n_near:
        t = l[near] * lam4
        t -= 10.0
        np.minimum(t, EXP_CLAMP, out=t)
        np.exp(t, out=t)
        t += 1.0
        np.reciprocal(t, out=t)
        out[near] = t
    return out


def _values_of(x) -> np.ndarray:
    if isinstance(x, Heatmap):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _offsets_of(delta) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(delta, OffsetField):
        return delta.dx, delta.dy
    dx, dy = delta
    return np.asarray(dx, dtype=np.float64), np.asarray(dy, dtype=np.float64)


class WarpPlan:
    """Precomputed scatter layout for one heatmap and window size.

    Holds the nonzero source cells in row-major order plus the flat
    indices of each source's output block in a zero-padded output
    buffer. Building a plan is the only O(S * K^2) integer work, so
    callers fitting the same heatmap repeatedly should reuse it.
    """

    def __init__(self, values: np.ndarray, window_cells: int):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatch("heatmap must be 2-dimensional")
        self.h, self.w = values.shape
        self.window = int(window_cells)
        self.r = (self.window - 1) // 2
        ys, xs = np.nonzero(values)
        self.ys = ys
        self.xs = xs
        self.vals = values[ys, xs]
        k = self.window
        self.hp = self.h + 2 * self.r
        self.wp = self.w + 2 * self.r
        off = np.arange(k, dtype=np.int64) - self.r
        # j coordinates covered by each source's block, as float64
        self.jx = (xs[:, None] + off[None, :]).astype(np.float64)
        self.jy = (ys[:, None] + off[None, :]).astype(np.float64)
        # flat padded indices: block of source s starts at (ys, xs) in padded coords
        base = ys.astype(np.int64) * self.wp + xs.astype(np.int64)
        rel = off[:, None] * self.wp + off[None, :] + (self.r * self.wp + self.r)
        self.idx = (base[:, None, None] + rel[None, :, :]).ravel()

    @property
    def num_sources(self) -> int:
        return self.vals.size


def _block_distances(plan: WarpPlan, dx: np.ndarray, dy: np.ndarray):
    """Per-source displaced centers; returns (dxb, dyb, l) with l the
    (S, K, K) Euclidean distances (computed in place of d^2)."""
    cx = plan.xs + dx[plan.ys, plan.xs]
    cy = plan.ys + dy[plan.ys, plan.xs]
    dxb = plan.jx - cx[:, None]  # (S, K)
    dyb = plan.jy - cy[:, None]
    d2 = (dxb * dxb)[:, None, :] + (dyb * dyb)[:, :, None]  # (S, K, K)
    l = np.sqrt(d2, out=d2)
    return dxb, dyb, l


def _scatter(plan: WarpPlan, contrib: np.ndarray) -> np.ndarray:
    padded = np.bincount(plan.idx, weights=contrib.ravel(), minlength=plan.hp * plan.wp)
    out = padded.reshape(plan.hp, plan.wp)[plan.r:plan.r + plan.h, plan.r:plan.r + plan.w]
    return np.ascontiguousarray(out)


def reconstruct_with_plan(plan: WarpPlan, dx: np.ndarray, dy: np.ndarray,
                          lambda_r: float, cache: dict | None = None) -> np.ndarray:
    """Windowed forward pass using a prebuilt plan; returns an (h, w) array.

    If `cache` is a dict, the per-source distance and weight blocks are
    stored in it for reuse by the backward pass.
    """
    if plan.num_sources == 0:
        return np.zeros((plan.h, plan.w))
    dxb, dyb, l = _block_distances(plan, dx, dy)
    wb = _weights_from_l(l, lambda_r)
    contrib = plan.vals[:, None, None] * wb
    if cache is not None:
        cache.update(dxb=dxb, dyb=dyb, l=l, wb=wb, lambda_r=lambda_r)
    return _scatter(plan, contrib)


@lru_cache(maxsize=256)
def _zero_offset_kernel(lambda_r: float, window_cells: int) -> np.ndarray:
    """The (K, K) weight block shared by all sources when offsets are zero."""
    r = (window_cells - 1) // 2
    off = (np.arange(window_cells, dtype=np.int64) - r).astype(np.float64)
    d2 = (off * off)[None, :] + (off * off)[:, None]
    l = np.sqrt(d2, out=d2)
    kernel = _weights_from_l(l, lambda_r)
    kernel.setflags(write=False)
    return kernel


def reconstruct_zero_offset(plan: WarpPlan, lambda_r: float) -> np.ndarray:
    """Forward pass with identically zero offsets (shared radial kernel).

    Bitwise identical to reconstruct_with_plan with zero offset arrays:
    with delta = 0 every source's weight block is the same function of
    the integer window offsets.
    """
    if plan.num_sources == 0:
        return np.zeros((plan.h, plan.w))
    kernel = _zero_offset_kernel(float(lambda_r), plan.window)
    contrib = plan.vals[:, None, None] * kernel[None, :, :]
    return _scatter(plan, contrib)


def grad_offsets_with_plan(plan: WarpPlan, upstream: np.ndarray, lambda_r: float,
                           cache: dict | None = None,
                           dx: np.ndarray | None = None,
                           dy: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """d(loss)/d(offset components), supported on the plan's source cells.

    The offset gradient is x_i * sum_j upstream_j * W'(l) * (-(j - c_i) / l)
    with W'(l) = -4 * lambda_r * W * (1 - W); the direction factor is
    defined as zero where l < 1e-8.
    """
    g_dx = np.zeros((plan.h, plan.w))
    g_dy = np.zeros((plan.h, plan.w))
    if plan.num_sources == 0:
        return g_dx, g_dy
    if cache is not None and "l" in cache and cache.get("lambda_r") == lambda_r:
        dxb, dyb, l, wb = cache["dxb"], cache["dyb"], cache["l"], cache["wb"]
    else:
        if dx is None or dy is None:
            raise ValueError("need either a forward cache or the offset arrays")
        dxb, dyb, l = _block_distances(plan, dx, dy)
        wb = _weights_from_l(l, lambda_r)

    up_pad = np.zeros((plan.hp, plan.wp))
    up_pad[plan.r:plan.r + plan.h, plan.r:plan.r + plan.w] = upstream
    upb = up_pad.ravel()[plan.idx].reshape(wb.shape)

    inv_l = np.zeros_like(l)
    np.divide(1.0, l, out=inv_l, where=l >= 1e-8)
    wprime = 1.0 - wb
    wprime *= wb
    wprime *= -4.0 * lambda_r
    common = upb * wprime
    common *= inv_l
    sx = -np.einsum("sab,sb->s", common, dxb)
    sy = -np.einsum("sab,sa->s", common, dyb)
    g_dx[plan.ys, plan.xs] = plan.vals * sx
    g_dy[plan.ys, plan.xs] = plan.vals * sy
    return g_dx, g_dy


def _grad_heatmap_full(values: np.ndarray, dx: np.ndarray, dy: np.ndarray,
                       upstream: np.ndarray, cfg: ReconstructionConfig,
                       chunk: int = 2048) -> np.ndarray:
    """d(loss)/d(x_i) for every cell i: sum_j upstream_j * W(l_ij)."""
    h, w = values.shape
    r = cfg.window_radius
    k = cfg.window_cells
    hp, wp = h + 2 * r, w + 2 * r
    up_pad = np.zeros((hp, wp))
    up_pad[r:r + h, r:r + w] = upstream
    up_flat = up_pad.ravel()

    out = np.empty(h * w)
    ys_all, xs_all = np.divmod(np.arange(h * w, dtype=np.int64), w)
    off = np.arange(k, dtype=np.int64) - r
    rel = off[:, None] * wp + off[None, :] + (r * wp + r)
    dxf = dx.ravel()
    dyf = dy.ravel()
    for s0 in range(0, h * w, chunk):
        s1 = min(s0 + chunk, h * w)
        ys = ys_all[s0:s1]
        xs = xs_all[s0:s1]
        cx = xs + dxf[s0:s1]
        cy = ys + dyf[s0:s1]
        jx = (xs[:, None] + off[None, :]).astype(np.float64)
        jy = (ys[:, None] + off[None, :]).astype(np.float64)
        dxb = jx - cx[:, None]
        dyb = jy - cy[:, None]
        d2 = (dxb * dxb)[:, None, :] + (dyb * dyb)[:, :, None]
        l = np.sqrt(d2, out=d2)
        wb = _weights_from_l(l, cfg.lambda_r)
        idx = (ys * wp + xs)[:, None, None] + rel[None, :, :]
        upb = up_flat[idx.ravel()].reshape(wb.shape)
        out[s0:s1] = np.einsum("sab,sab->s", upb, wb)
    return out.reshape(h, w)


def _check_shapes(values, dx, dy, upstream=None):
    if dx.shape != values.shape or dy.shape != values.shape:
        raise DimensionMismatch(
            f"heatmap {values.shape} and offset field {dx.shape}/{dy.shape} must share one grid"
        )
    if upstream is not None and upstream.shape != values.shape:
        raise DimensionMismatch("upstream gradient must have the grid's shape")


def reconstruct(X, delta, cfg: ReconstructionConfig) -> np.ndarray:
    """Sliding-window reconstruction: warp heatmap X by the offset field.

    Output values may exceed 1 (overlapping contributions superpose); the
    loss compares against targets smoothed by the same operator, so no
    clamping is applied. Offsets longer than the window radius are
    reported as a warning because their mass cannot reach its target.
    """
    values = _values_of(X)
    dx, dy = _offsets_of(delta)
    _check_shapes(values, dx, dy)
    max_dx = float(np.max(np.abs(dx))) if dx.size else 0.0
    max_dy = float(np.max(np.abs(dy))) if dy.size else 0.0
    logger.debug("reconstruct: max |dx| = %.3f, max |dy| = %.3f", max_dx, max_dy)
    norms2 = dx * dx + dy * dy
    if norms2.size and float(norms2.max()) > cfg.window_radius ** 2:
        warnings.warn(
            f"offset norm {math.sqrt(float(norms2.max())):.2f} exceeds the window radius "
            f"{cfg.window_radius}; motion beyond it is truncated",
            RuntimeWarning,
            stacklevel=2,
        )
    plan = WarpPlan(values, cfg.window_cells)
    return reconstruct_with_plan(plan, dx, dy, cfg.lambda_r)


def reconstruct_dense(X, delta, lambda_r: float, chunk_rows: int = 8) -> np.ndarray:
    """O(N^2) oracle: the same sum without any windowing.

    Intended for small grids; memory is bounded by chunking output rows.
    """
    values = _values_of(X)
    dx, dy = _offsets_of(delta)
    _check_shapes(values, dx, dy)
    h, w = values.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cx = (xx + dx).ravel()
    cy = (yy + dy).ravel()
    vals = values.ravel()
    out = np.empty(h * w)
    jx_all = xx.ravel().astype(np.float64)
    jy_all = yy.ravel().astype(np.float64)
    step = max(1, chunk_rows) * w
    for j0 in range(0, h * w, step):
        j1 = min(j0 + step, h * w)
        dxm = jx_all[j0:j1, None] - cx[None, :]
        dym = jy_all[j0:j1, None] - cy[None, :]
        d2 = dxm * dxm + dym * dym
        l = np.sqrt(d2, out=d2)
        wb = _weights_from_l(l, lambda_r)
        out[j0:j1] = (wb * vals[None, :]).sum(axis=1)
    return out.reshape(h, w)


def reconstruct_backward(X, delta, cfg: ReconstructionConfig, upstream) -> WarpGradients:
    """Analytic gradients of sum(upstream * reconstruct(X, delta, cfg)).

    d_heatmap covers every grid cell; the offset gradient vanishes where
    x_i is zero because the contribution is linear in x_i.
    """
    values = _values_of(X)
    dx, dy = _offsets_of(delta)
    upstream = np.asarray(upstream, dtype=np.float64)
    _check_shapes(values, dx, dy, upstream)
    plan = WarpPlan(values, cfg.window_cells)
    g_dx, g_dy = grad_offsets_with_plan(plan, upstream, cfg.lambda_r, dx=dx, dy=dy)
    d_heatmap = _grad_heatmap_full(values, dx, dy, upstream, cfg)
    return WarpGradients(d_heatmap=d_heatmap, d_offset_x=g_dx, d_offset_y=g_dy)


def smoothed_target(X_gt, cfg: ReconstructionConfig,
                    plan: WarpPlan | None = None) -> np.ndarray:
    """Ground truth passed through the operator with zero offsets.

    Gives targets the same lambda_r-dependent blur as predictions.
    """
    values = _values_of(X_gt)
    if plan is None:
        plan = WarpPlan(values, cfg.window_cells)
    return reconstruct_zero_offset(plan, cfg.lambda_r)
