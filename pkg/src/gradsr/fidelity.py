"""Residual statistics, adaptive fidelity-norm selection, and the
reweighting that turns a p-norm data term into a weighted least-squares one.

The residual distribution is summarized by two robust scales: a
median-based Gaussian scale and a mean-absolute-deviation Laplacian scale.
Their ratio is mapped onto gamma in (0, 1), where small gamma means
impulse-like noise (p -> 1) and large gamma means Gaussian noise (p -> 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .degrade import DegradationOperator, apply

# Robust-estimator constants for the raw scale ratio sigma_l / sigma_g of
# the two pure reference distributions, used to calibrate gamma.
_MAD_TO_SIGMA = 1.4826
_NORMAL_MAD = 0.6744897501960817  # Phi^-1(0.75)
_RHO_GAUSSIAN = (2.0 / math.sqrt(math.pi)) / (_MAD_TO_SIGMA * _NORMAL_MAD)
_RHO_LAPLACIAN = math.sqrt(2.0) / (_MAD_TO_SIGMA * math.log(2.0))
_GAMMA_AT_GAUSSIAN = 0.9
_GAMMA_AT_LAPLACIAN = 0.05
_GAMMA_SLOPE = (_GAMMA_AT_GAUSSIAN - _GAMMA_AT_LAPLACIAN) / (
    _RHO_GAUSSIAN - _RHO_LAPLACIAN
)
_GAMMA_OFFSET = _GAMMA_AT_GAUSSIAN - _GAMMA_SLOPE * _RHO_GAUSSIAN
_GAMMA_MIN = 0.005
_GAMMA_MAX = 0.995

GAMMA_KNOT_LO = 0.112
GAMMA_KNOT_HI = 0.798


@dataclass(frozen=True)
class NoiseStats:
    sigma_g: float
    sigma_l: float
    gamma: float


@dataclass(frozen=True)
class NormSelection:
    """Arctangent bridge between the p=1 and p=2 branches."""

    a: float
    b: float
    c: float
    d: float


def default_curve(slope: float = 6.0) -> NormSelection:
    """Monotone curve through p(0.112)=1 and p(0.798)=2, centered between.

    The inflection sits at the midpoint gamma=0.455 (so d=1.5 and
    c=-slope*0.455) and the amplitude is solved from the knot values.
    """
    mid = 0.5 * (GAMMA_KNOT_LO + GAMMA_KNOT_HI)
    half_span = 0.5 * (GAMMA_KNOT_HI - GAMMA_KNOT_LO)
    a = 0.5 / math.atan(slope * half_span)
    return NormSelection(a=a, b=slope, c=-slope * mid, d=1.5)


def gamma_calibration() -> dict:
    """Constants of the raw-ratio -> gamma map, for run manifests."""
    return {
        "rho_gaussian": _RHO_GAUSSIAN,
        "rho_laplacian": _RHO_LAPLACIAN,
        "gamma_at_gaussian": _GAMMA_AT_GAUSSIAN,
        "gamma_at_laplacian": _GAMMA_AT_LAPLACIAN,
        "slope": _GAMMA_SLOPE,
        "offset": _GAMMA_OFFSET,
    }


def residuals(
    stack: list[np.ndarray], ops: list[DegradationOperator], z: np.ndarray
) -> np.ndarray:
    """Concatenated per-frame observation residuals y_k - A_k z."""
    if len(stack) != len(ops):
        raise ValueError(f"{len(stack)} frames but {len(ops)} operators")
    return np.concatenate(
        [(y - apply(op, z)).ravel() for y, op in zip(stack, ops)]
    )


def estimate_noise(r: np.ndarray) -> NoiseStats:
    """Robust two-scale summary of a residual vector."""
    r = np.asarray(r, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("empty residual vector")
    dev = np.abs(r - np.median(r))
    sigma_g = _MAD_TO_SIGMA * float(np.median(dev))
    sigma_l = math.sqrt(2.0) * float(np.mean(dev))
    if sigma_g == 0.0 and sigma_l == 0.0:
        gamma = _GAMMA_AT_GAUSSIAN  # degenerate residuals: treat as Gaussian
    elif sigma_g == 0.0:
        gamma = _GAMMA_MIN  # majority-zero residuals: impulse-dominated
    else:
        raw = sigma_l / sigma_g
        gamma = float(
            np.clip(_GAMMA_OFFSET + _GAMMA_SLOPE * raw, _GAMMA_MIN, _GAMMA_MAX)
        )
    return NoiseStats(sigma_g=sigma_g, sigma_l=sigma_l, gamma=gamma)


def select_p(stats: NoiseStats, curve: NormSelection | None = None) -> float:
    """Piecewise fidelity-norm exponent in [1, 2], monotone in gamma."""
    if curve is None:
        curve = default_curve()
    g = stats.gamma
    if not (0.0 < g < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {g}")
    if g <= GAMMA_KNOT_LO:
        return 1.0
    if g > GAMMA_KNOT_HI:
        return 2.0
    p = curve.a * math.atan(curve.b * g + curve.c) + curve.d
    return float(min(max(p, 1.0), 2.0))


def irn_weights(r: np.ndarray, p: float, epsilon: float = 1e-5) -> np.ndarray:
    """Elementwise |r|^(p-2), clamped to epsilon^(p-2) for tiny residuals.

    Used as the diagonal of the weighted least-squares surrogate:
    sum(w * r^2) == sum(|r|^p) wherever |r| > epsilon.
    """
    if not 1.0 <= p <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    a = np.abs(np.asarray(r, dtype=np.float64))
    return np.maximum(a, epsilon) ** (p - 2.0)
