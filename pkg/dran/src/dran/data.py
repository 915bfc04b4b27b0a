"""Synthetic training data: sharp-edged ground-truth images and the
degradation recipe that produces the paired low-resolution inputs.

The recipe mirrors the reconstruction engine's simulator: 3x3 Gaussian
blur (sigma 1) with symmetric boundary, then top-left decimation.
"""

from __future__ import annotations

import numpy as np

BLUR_SIZE = 3
BLUR_SIGMA = 1.0


def discrete_gradient(img: np.ndarray) -> np.ndarray:
    """Centered [-1/2, 0, 1/2] differences, symmetric boundary, (2, H, W)."""
    padded = np.pad(img, 1, mode="symmetric")
    horiz = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    vert = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return np.stack([horiz, vert])


def _gaussian_taps(size: int = BLUR_SIZE, sigma: float = BLUR_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Blur with the shared kernel, then keep every scale-th sample."""
    taps = _gaussian_taps()
    p = BLUR_SIZE // 2
    padded = np.pad(hr, p, mode="symmetric")
    out = np.zeros_like(hr)
    for a in range(BLUR_SIZE):
        for b in range(BLUR_SIZE):
            out += taps[a, b] * padded[a : a + hr.shape[0], b : b + hr.shape[1]]
    return out[::scale, ::scale]


def synthesize_images(count: int, size: int = 128, seed: int = 0) -> list[np.ndarray]:
    """Random scenes mixing sharp shapes with oriented gratings.

    Gratings keep the gradient field dense so the mapping cannot collapse
    to predicting zero; shapes supply isolated sharp edges.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = []
    for _ in range(count):
        img = rng.uniform(60, 180) * np.ones((size, size))
        for _ in range(int(rng.integers(1, 4))):
            theta = rng.uniform(0, np.pi)
            period = rng.uniform(10, 28)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(15, 45)
            axis = np.cos(theta) * xx + np.sin(theta) * yy
            img = img + amp * np.sin(2 * np.pi * axis / period + phase)
        for _ in range(int(rng.integers(3, 7))):
            kind = rng.random()
            level = float(rng.uniform(40, 235))
            if kind < 0.45:
                x0, y0 = rng.integers(0, size - 16, size=2)
                w, h = rng.integers(8, size // 3, size=2)
                mask = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
            elif kind < 0.8:
                cx, cy = rng.uniform(10, size - 10, size=2)
                rx, ry = rng.uniform(4, size // 4, size=2)
                mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 < 1.0
            else:
                x0 = int(rng.integers(0, size - 6))
                w = int(rng.integers(2, 6))
                mask = (xx >= x0) & (xx < x0 + w)
            img = np.where(mask, level, img)
        images.append(np.clip(img, 0.0, 255.0))
    return images


def make_pair(hr: np.ndarray, scale: int):
    """(lr image, lr gradients, hr gradients) for one ground-truth image."""
    lr = degrade(hr, scale)
    return lr, discrete_gradient(lr), discrete_gradient(hr)


def random_crop_pair(hr: np.ndarray, scale: int, crop_lr: int, rng):
    h, w = hr.shape
    crop_hr = crop_lr * scale
    y0 = int(rng.integers(0, h - crop_hr + 1)) if h > crop_hr else 0
    x0 = int(rng.integers(0, w - crop_hr + 1)) if w > crop_hr else 0
    return make_pair(hr[y0 : y0 + crop_hr, x0 : x0 + crop_hr], scale)
