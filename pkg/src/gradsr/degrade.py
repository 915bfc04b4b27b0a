"""Forward observation model for multi-frame super-resolution.

Each low-resolution frame is modeled as decimate(blur(warp(z))): a subpixel
translation of the high-resolution scene, a normalized blur, and decimation
by an integer factor. All stages use symmetric (reflective) boundary
handling, and every stage has an exact adjoint so that
``<apply(z), r> == <z, apply_adjoint(r)>`` holds to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import convolve2d, correlate2d


@dataclass(frozen=True)
class FrameMotion:
    """Subpixel translation of a frame, in high-resolution pixels."""

    dx: float
    dy: float

    def __post_init__(self):
        if not (math.isfinite(self.dx) and math.isfinite(self.dy)):
            raise ValueError(f"non-finite motion ({self.dx}, {self.dy})")


@dataclass(frozen=True)
class BlurKernel:
    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        object.__setattr__(self, "taps", taps)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1] or taps.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be odd and square, got {taps.shape}")
        if abs(float(taps.sum()) - 1.0) > 1e-12:
            raise ValueError(f"kernel taps must sum to 1, got {taps.sum()!r}")

    @property
    def size(self) -> int:
        return self.taps.shape[0]


def gaussian_kernel(size: int = 3, sigma: float = 1.0) -> BlurKernel:
    """Normalized isotropic Gaussian sampled on a size x size grid."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return BlurKernel(k / k.sum())


def delta_kernel(size: int = 1) -> BlurKernel:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return BlurKernel(k)


@dataclass(frozen=True)
class DegradationOperator:
    """Per-frame composition: warp by motion, blur, decimate by scale."""

    motion: FrameMotion
    blur: BlurKernel
    scale: int

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        object.__setattr__(self, "_factor_cache", {})


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    """Symmetric-reflection index fold: ..., -1 -> 0, n -> n-1, ..."""
    m = np.mod(idx, 2 * n)
    return np.where(m < n, m, 2 * n - 1 - m)


@lru_cache(maxsize=128)
def _warp_plan(h: int, w: int, dy: float, dx: float):
    """Reflected index rows/cols and corner weights for a bilinear shift.

    Output pixel (i, j) samples the source at (i - dy, j - dx).
    """
    oy = -dy
    ox = -dx
    fy = oy - math.floor(oy)
    fx = ox - math.floor(ox)
    iy0 = np.arange(h) + math.floor(oy)
    ix0 = np.arange(w) + math.floor(ox)
    ry0 = _reflect(iy0, h)
    ry1 = _reflect(iy0 + 1, h)
    rx0 = _reflect(ix0, w)
    rx1 = _reflect(ix0 + 1, w)
    weights = ((1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx)
    corners = ((ry0, rx0), (ry0, rx1), (ry1, rx0), (ry1, rx1))
    return corners, weights


def warp(z: np.ndarray, motion: FrameMotion) -> np.ndarray:
    h, w = z.shape
    corners, weights = _warp_plan(h, w, motion.dy, motion.dx)
    out = np.zeros_like(z, dtype=np.float64)
    for (ry, rx), wt in zip(corners, weights):
        if wt != 0.0:
            out += wt * z[np.ix_(ry, rx)]
    return out


def warp_adjoint(r: np.ndarray, motion: FrameMotion) -> np.ndarray:
    h, w = r.shape
    corners, weights = _warp_plan(h, w, motion.dy, motion.dx)
    out = np.zeros_like(r, dtype=np.float64)
    for (ry, rx), wt in zip(corners, weights):
        if wt != 0.0:
            np.add.at(out, (ry[:, None], rx[None, :]), wt * r)
    return out


@lru_cache(maxsize=32)
def _pad_index_map(h: int, w: int, pad: int) -> np.ndarray:
    """Source index of each pixel of a symmetric-padded raster."""
    idx = np.arange(h * w).reshape(h, w)
    return np.pad(idx, pad, mode="symmetric")


def convolve_sym(z: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """True convolution with symmetric boundary padding."""
    p = kernel.size // 2
    if p == 0:
        return z * kernel.taps[0, 0]
    padded = np.pad(z, p, mode="symmetric")
    flipped = kernel.taps[::-1, ::-1]
    return correlate2d(padded, flipped, mode="valid")


def convolve_sym_adjoint(r: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Exact adjoint of convolve_sym: full correlation plus border fold."""
    p = kernel.size // 2
    if p == 0:
        return r * kernel.taps[0, 0]
    flipped = kernel.taps[::-1, ::-1]
    grad_padded = convolve2d(r, flipped, mode="full")
    idx = _pad_index_map(r.shape[0], r.shape[1], p)
    out = np.zeros(r.size, dtype=np.float64)
    np.add.at(out, idx.ravel(), grad_padded.ravel())
    return out.reshape(r.shape)


def _separable_taps(taps: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Rank-1 factorization taps = outer(ky, kx), or None."""
    if taps.shape == (1, 1):
        return np.array([taps[0, 0]]), np.array([1.0])
    u, s, vt = np.linalg.svd(taps)
    if s[1] > 1e-13 * s[0]:
        return None
    ky = u[:, 0] * math.sqrt(s[0])
    kx = vt[0, :] * math.sqrt(s[0])
    if not np.allclose(np.outer(ky, kx), taps, atol=1e-14):
        return None
    return ky, kx


def _warp_matrix(n: int, corner_idx, corner_wt) -> np.ndarray:
    mat = np.zeros((n, n))
    rows = np.arange(n)
    for idx, wt in zip(corner_idx, corner_wt):
        np.add.at(mat, (rows, idx), wt)
    return mat


def _conv_matrix(n: int, k1d: np.ndarray) -> np.ndarray:
    """1-D true convolution with symmetric boundary as a dense matrix."""
    p = k1d.size // 2
    mat = np.zeros((n, n))
    rows = np.arange(n)
    for a in range(-p, p + 1):
        np.add.at(mat, (rows, _reflect(rows - a, n)), k1d[p + a])
    return mat


def _axis_factors(op: DegradationOperator, h: int, w: int):
    """Row/column matrices (L, R) with apply(z) == L @ z @ R.T, if separable."""
    key = (h, w)
    cache = op._factor_cache
    if key in cache:
        return cache[key]
    sep = _separable_taps(op.blur.taps)
    if sep is None:
        cache[key] = None
        return None
    ky, kx = sep
    corners, weights = _warp_plan(h, w, op.motion.dy, op.motion.dx)
    (ry0, rx0) = corners[0]
    (ry1, rx1) = corners[3]
    w00, w01, w10, w11 = weights  # (1-fy)(1-fx), (1-fy)fx, fy(1-fx), fy fx
    fy_w = (w00 + w01, w10 + w11)  # marginal row weights (1-fy, fy)
    fx_w = (w00 + w10, w01 + w11)  # marginal column weights (1-fx, fx)
    warp_rows = _warp_matrix(h, (ry0, ry1), fy_w)
    warp_cols = _warp_matrix(w, (rx0, rx1), fx_w)
    left = (_conv_matrix(h, ky) @ warp_rows)[:: op.scale, :]
    right = (_conv_matrix(w, kx) @ warp_cols)[:: op.scale, :]
    cache[key] = (np.ascontiguousarray(left), np.ascontiguousarray(right))
    return cache[key]


def apply(op: DegradationOperator, z: np.ndarray) -> np.ndarray:
    """Simulate one low-resolution observation of z."""
    h, w = z.shape
    s = op.scale
    if h % s or w % s:
        raise ValueError(f"dimensions {h}x{w} not divisible by scale {s}")
    z = np.asarray(z, dtype=np.float64)
    factors = _axis_factors(op, h, w)
    if factors is not None:
        left, right = factors
        return left @ z @ right.T
    x = warp(z, op.motion)
    x = convolve_sym(x, op.blur)
    return x[::s, ::s]


def apply_adjoint(op: DegradationOperator, r: np.ndarray) -> np.ndarray:
    """Exact adjoint of apply: zero-insert, correlate, inverse-splat."""
    r = np.asarray(r, dtype=np.float64)
    s = op.scale
    h, w = r.shape[0] * s, r.shape[1] * s
    factors = _axis_factors(op, h, w)
    if factors is not None:
        left, right = factors
        return left.T @ r @ right
    up = np.zeros((h, w), dtype=np.float64)
    up[::s, ::s] = r
    x = convolve_sym_adjoint(up, op.blur)
    return warp_adjoint(x, op.motion)


def simulate_stack(
    z: np.ndarray,
    k: int,
    scale: int,
    blur: BlurKernel,
    noise_var: float = 0.0,
    seed: int = 0,
) -> list[tuple[np.ndarray, FrameMotion]]:
    """Generate k shifted, blurred, decimated, noisy observations of z.

    Frame 0 is the zero-shift reference; the remaining shifts are uniform
    over [0, scale) per axis. noise_var is the white-noise variance on the
    [0, 1] intensity scale, so the per-pixel standard deviation on the
    [0, 255] scale is 255 * sqrt(noise_var).
    """
    if k < 1:
        raise ValueError(f"need at least one frame, got k={k}")
    z = np.asarray(z, dtype=np.float64)
    rng = np.random.default_rng(seed)
    motions = [FrameMotion(0.0, 0.0)]
    for _ in range(k - 1):
        dx = float(rng.uniform(0.0, scale))
        dy = float(rng.uniform(0.0, scale))
        motions.append(FrameMotion(dx, dy))
    sigma = 255.0 * math.sqrt(noise_var)
    stack = []
    for motion in motions:
        op = DegradationOperator(motion, blur, scale)
        frame = apply(op, z)
        if noise_var > 0.0:
            frame = frame + rng.normal(0.0, sigma, size=frame.shape)
        stack.append((frame, motion))
    return stack
