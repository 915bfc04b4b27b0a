"""Image containers, file formats, and full-reference quality metrics.

Images are 2-D float64 arrays of shape (height, width) with values nominally
in [0, 255]. Three file formats are supported:

* PGM (binary "P5"): 8-bit grayscale, header ``P5\\n<w> <h>\\n255\\n``.
* IMGF: raw float raster, magic ``IMGF`` + u32le width + u32le height +
  width*height float32le values, row-major.
* GRDF: gradient field, magic ``GRDF`` + u32le width + u32le height +
  u32le channel count (always 2) + horizontal plane + vertical plane,
  each width*height float32le row-major.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate


class ImageFormatError(Exception):
    """Base class for image file format problems."""


class UnsupportedMagicError(ImageFormatError):
    """File starts with a magic number this reader does not handle."""


class MalformedHeaderError(ImageFormatError):
    """Header present but unparsable or inconsistent."""


class TruncatedPayloadError(ImageFormatError):
    """Header promises more payload bytes than the file contains."""


@dataclass(frozen=True)
class GradientField:
    """Paired horizontal (d/dx) and vertical (d/dy) gradient rasters."""

    horiz: np.ndarray
    vert: np.ndarray

    def __post_init__(self):
        if self.horiz.shape != self.vert.shape or self.horiz.ndim != 2:
            raise ValueError(
                f"gradient planes must share a 2-D shape, got "
                f"{self.horiz.shape} and {self.vert.shape}"
            )

    @property
    def height(self) -> int:
        return self.horiz.shape[0]

    @property
    def width(self) -> int:
        return self.horiz.shape[1]


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float


def _check_image(img: np.ndarray, what: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"{what} must be 2-D, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError(f"{what} contains non-finite values")
    return img


def read_image(path) -> np.ndarray:
    """Read a PGM (P5) or IMGF file into a float64 (H, W) array."""
    data = Path(path).read_bytes()
    if data[:4] == b"IMGF":
        return _parse_imgf(data)
    if data[:2] == b"P5":
        return _parse_pgm(data)
    magic = data[:2].decode("latin1", errors="replace")
    raise UnsupportedMagicError(f"{path}: unsupported magic {magic!r}")


def write_image(img: np.ndarray, path, fmt: str = "pgm") -> None:
    """Write an image as binary PGM (clamped/rounded to 8 bits) or IMGF."""
    img = _check_image(img)
    h, w = img.shape
    if fmt == "pgm":
        payload = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        blob = b"P5\n%d %d\n255\n" % (w, h) + payload.tobytes()
    elif fmt == "imgf":
        blob = b"IMGF" + struct.pack("<II", w, h) + img.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown image format {fmt!r}")
    Path(path).write_bytes(blob)


def _parse_pgm(data: bytes) -> np.ndarray:
    # Token-based header parse: magic, width, height, maxval, with
    # netpbm-style '#' comments allowed between tokens.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("PGM header ended prematurely")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise MalformedHeaderError(f"non-numeric PGM header field: {exc}") from exc
    if w <= 0 or h <= 0:
        raise MalformedHeaderError(f"bad PGM dimensions {w}x{h}")
    if maxval != 255:
        raise MalformedHeaderError(f"only 8-bit PGM supported, maxval={maxval}")
    payload = data[pos : pos + w * h]
    if len(payload) < w * h:
        raise TruncatedPayloadError(
            f"PGM payload has {len(payload)} bytes, expected {w * h}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float64)


def _parse_imgf(data: bytes) -> np.ndarray:
    if len(data) < 12:
        raise MalformedHeaderError("IMGF header shorter than 12 bytes")
    w, h = struct.unpack("<II", data[4:12])
    if w == 0 or h == 0:
        raise MalformedHeaderError(f"bad IMGF dimensions {w}x{h}")
    need = 12 + 4 * w * h
    if len(data) < need:
        raise TruncatedPayloadError(
            f"IMGF payload has {len(data) - 12} bytes, expected {4 * w * h}"
        )
    img = np.frombuffer(data[12:need], dtype="<f4").reshape(h, w).astype(np.float64)
    if not np.isfinite(img).all():
        raise MalformedHeaderError("IMGF payload contains non-finite values")
    return img


def read_gradient_field(path) -> GradientField:
    """Read a GRDF file (lossless float32 round-trip)."""
    data = Path(path).read_bytes()
    if data[:4] != b"GRDF":
        magic = data[:4].decode("latin1", errors="replace")
        raise UnsupportedMagicError(f"{path}: bad gradient-field magic {magic!r}")
    if len(data) < 16:
        raise MalformedHeaderError("GRDF header shorter than 16 bytes")
    w, h, nchan = struct.unpack("<III", data[4:16])
    if nchan != 2:
        raise MalformedHeaderError(f"GRDF must have 2 channels, got {nchan}")
    if w == 0 or h == 0:
        raise MalformedHeaderError(f"bad GRDF dimensions {w}x{h}")
    need = 16 + 2 * 4 * w * h
    if len(data) < need:
        raise TruncatedPayloadError(
            f"GRDF payload has {len(data) - 16} bytes, expected {2 * 4 * w * h}"
        )
    plane = 4 * w * h
    horiz = np.frombuffer(data[16 : 16 + plane], dtype="<f4").reshape(h, w)
    vert = np.frombuffer(data[16 + plane : need], dtype="<f4").reshape(h, w)
    return GradientField(horiz.astype(np.float64), vert.astype(np.float64))


def write_gradient_field(field: GradientField, path) -> None:
    h, w = field.horiz.shape
    blob = (
        b"GRDF"
        + struct.pack("<III", w, h, 2)
        + field.horiz.astype("<f4").tobytes()
        + field.vert.astype("<f4").tobytes()
    )
    Path(path).write_bytes(blob)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    a = _check_image(a, "a")
    b = _check_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# SSIM constants from the standard structural-similarity definition:
# 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03, 8-bit dynamic range.
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_L = 255.0


def _ssim_window() -> np.ndarray:
    r = _SSIM_WINDOW // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(ax**2) / (2.0 * _SSIM_SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over the valid (fully-windowed) region.

    Local means/variances come from an 11x11 Gaussian window; the 5-pixel
    border where the window overhangs the image is excluded.
    """
    a = _check_image(a, "a")
    b = _check_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(
            f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW}, got {a.shape}"
        )
    win = _ssim_window()
    r = _SSIM_WINDOW // 2
    sl = (slice(r, -r), slice(r, -r))

    def smooth(x):
        return correlate(x, win, mode="constant")[sl]

    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b

    c1 = (_SSIM_K1 * _SSIM_L) ** 2
    c2 = (_SSIM_K2 * _SSIM_L) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def metric_report(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> MetricReport:
    return MetricReport(psnr=psnr(a, b, peak), ssim=ssim(a, b))
