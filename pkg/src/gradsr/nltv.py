"""Patch-similarity weight graph and the non-local gradient machinery.

For each pixel the graph keeps the m most similar pixels inside a search
window, scored by a Gaussian-weighted squared patch distance, with weights
w = exp(-dist / (2 eta^2)). The non-local gradient of an image is the
per-edge field (z[j] - z[i]) * sqrt(w); its L1 norm is the regularizer
value used by the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate2d

_WEIGHT_FLOOR = 1e-12  # exp() underflows to 0 for very dissimilar patches


@dataclass(frozen=True)
class NonLocalGraph:
    height: int
    width: int
    neighbors: np.ndarray  # (N, m) flat pixel indices
    weights: np.ndarray  # (N, m) in (0, 1]; 0 marks an absent entry
    valid: np.ndarray  # (N, m) bool
    sqrt_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sqrt_weights", np.sqrt(self.weights))

    @property
    def num_pixels(self) -> int:
        return self.height * self.width

    @property
    def max_neighbors(self) -> int:
        return self.neighbors.shape[1]


def _patch_kernel(patch_radius: int) -> np.ndarray:
    """Per-patch Gaussian weighting of squared differences, summing to 1."""
    sigma = max(patch_radius / 2.0, 1e-6)
    ax = np.arange(-patch_radius, patch_radius + 1, dtype=np.float64)
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def build_graph(
    img: np.ndarray,
    patch_radius: int = 3,
    window_radius: int = 10,
    m: int = 10,
    eta: float = 1.0,
) -> NonLocalGraph:
    """Keep the m nearest patches per pixel inside the search window.

    Ties in patch distance break deterministically by window scan order.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if patch_radius < 1 or window_radius < 1:
        raise ValueError("patch and window radii must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    n = h * w
    kernel = _patch_kernel(patch_radius)
    pr, wr = patch_radius, window_radius

    offsets = [
        (di, dj)
        for di in range(-wr, wr + 1)
        for dj in range(-wr, wr + 1)
        if (di, dj) != (0, 0) and abs(di) < h and abs(dj) < w
    ]
    n_off = len(offsets)
    m_eff = min(m, n_off)

    padded = np.pad(img, pr + wr, mode="symmetric")
    cols = np.arange(w)

    # Process row blocks so the per-pixel distance stack stays small.
    rows_per_block = max(1, int(64e6 / (max(1, w * n_off) * 8)))
    neighbors = np.zeros((n, m_eff), dtype=np.int64)
    weights = np.zeros((n, m_eff), dtype=np.float64)
    valid = np.zeros((n, m_eff), dtype=bool)

    for r0 in range(0, h, rows_per_block):
        r1 = min(r0 + rows_per_block, h)
        bh = r1 - r0
        dists = np.empty((n_off, bh, w), dtype=np.float64)
        base = padded[wr + r0 : wr + r1 + 2 * pr, wr : wr + w + 2 * pr]
        block_rows = np.arange(r0, r1)
        for oi, (di, dj) in enumerate(offsets):
            shifted = padded[
                wr + di + r0 : wr + di + r1 + 2 * pr,
                wr + dj : wr + dj + w + 2 * pr,
            ]
            diff2 = (shifted - base) ** 2
            d = correlate2d(diff2, kernel, mode="valid")
            in_bounds = (
                ((block_rows + di) >= 0)[:, None]
                & ((block_rows + di) < h)[:, None]
                & ((cols + dj) >= 0)[None, :]
                & ((cols + dj) < w)[None, :]
            )
            dists[oi] = np.where(in_bounds, d, np.inf)

        flat = dists.reshape(n_off, bh * w)
        order = np.argsort(flat, axis=0, kind="stable")[:m_eff]
        picked = np.take_along_axis(flat, order, axis=0)
        off_arr = np.asarray(offsets)
        di_sel = off_arr[order, 0]
        dj_sel = off_arr[order, 1]
        rr = np.repeat(block_rows, w)[None, :]
        cc = np.tile(cols, bh)[None, :]
        nbr = (rr + di_sel) * w + (cc + dj_sel)
        ok = np.isfinite(picked)
        sl = slice(r0 * w, r1 * w)
        neighbors[sl] = np.where(ok, nbr, 0).T
        weights[sl] = np.where(
            ok, np.maximum(np.exp(-picked / (2.0 * eta * eta)), _WEIGHT_FLOOR), 0.0
        ).T
        valid[sl] = ok.T

    return NonLocalGraph(h, w, neighbors, weights, valid)


def nl_gradient(graph: NonLocalGraph, z: np.ndarray) -> np.ndarray:
    """Per-edge weighted differences (z[j] - z[i]) * sqrt(w), shape (N, m)."""
    if z.shape != (graph.height, graph.width):
        raise ValueError(f"image {z.shape} does not match graph "
                         f"({graph.height}, {graph.width})")
    zf = np.asarray(z, dtype=np.float64).ravel()
    out = (zf[graph.neighbors] - zf[:, None]) * graph.sqrt_weights
    return np.where(graph.valid, out, 0.0)


def nl_divergence(graph: NonLocalGraph, f: np.ndarray) -> np.ndarray:
    """Negative adjoint of nl_gradient: <nl_gradient(z), f> == -<z, div(f)>."""
    if f.shape != graph.neighbors.shape:
        raise ValueError(
            f"field {f.shape} does not align with graph {graph.neighbors.shape}"
        )
    contrib = np.where(graph.valid, graph.sqrt_weights * f, 0.0)
    out = contrib.sum(axis=1)
    np.subtract.at(out, graph.neighbors.ravel(), contrib.ravel())
    return out.reshape(graph.height, graph.width)


def nl_adjoint(graph: NonLocalGraph, f: np.ndarray) -> np.ndarray:
    """Plain adjoint of nl_gradient (the negated divergence)."""
    return -nl_divergence(graph, f)


def nltv_value(graph: NonLocalGraph, z: np.ndarray) -> float:
    """L1 norm of the non-local gradient field."""
    return float(np.abs(nl_gradient(graph, z)).sum())
