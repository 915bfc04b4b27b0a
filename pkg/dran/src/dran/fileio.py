"""Minimal readers/writers for the image and gradient-field file formats.

These formats are the only contract with the reconstruction engine:
PGM (P5) and IMGF for images, GRDF for two-channel gradient fields.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


def read_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] == b"IMGF":
        w, h = struct.unpack("<II", data[4:12])
        need = 12 + 4 * w * h
        if len(data) < need:
            raise ValueError(f"{path}: truncated IMGF payload")
        return np.frombuffer(data[12:need], dtype="<f4").reshape(h, w).astype(np.float64)
    if data[:2] == b"P5":
        pos = 2
        fields = []
        while len(fields) < 3:
            while pos < len(data) and data[pos : pos + 1].isspace():
                pos += 1
            if data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            fields.append(int(data[start:pos]))
        pos += 1
        w, h, maxval = fields
        if maxval != 255:
            raise ValueError(f"{path}: only 8-bit PGM supported")
        payload = data[pos : pos + w * h]
        if len(payload) < w * h:
            raise ValueError(f"{path}: truncated PGM payload")
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float64)
    raise ValueError(f"{path}: not a PGM or IMGF file")


def write_image(img: np.ndarray, path, fmt: str = "pgm") -> None:
    h, w = img.shape
    if fmt == "pgm":
        payload = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        blob = b"P5\n%d %d\n255\n" % (w, h) + payload.tobytes()
    elif fmt == "imgf":
        blob = b"IMGF" + struct.pack("<II", w, h) + img.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown format {fmt!r}")
    Path(path).write_bytes(blob)


def write_gradient_field(horiz: np.ndarray, vert: np.ndarray, path) -> None:
    if horiz.shape != vert.shape:
        raise ValueError("gradient planes must share a shape")
    h, w = horiz.shape
    blob = (
        b"GRDF"
        + struct.pack("<III", w, h, 2)
        + horiz.astype("<f4").tobytes()
        + vert.astype("<f4").tobytes()
    )
    Path(path).write_bytes(blob)


def read_gradient_field(path) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != b"GRDF":
        raise ValueError(f"{path}: bad magic")
    w, h, nchan = struct.unpack("<III", data[4:16])
    if nchan != 2:
        raise ValueError(f"{path}: expected 2 channels, got {nchan}")
    plane = 4 * w * h
    if len(data) < 16 + 2 * plane:
        raise ValueError(f"{path}: truncated payload")
    horiz = np.frombuffer(data[16 : 16 + plane], dtype="<f4").reshape(h, w)
    vert = np.frombuffer(data[16 + plane : 16 + 2 * plane], dtype="<f4").reshape(h, w)
    return horiz.astype(np.float64), vert.astype(np.float64)
