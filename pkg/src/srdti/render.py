"""Figure-style slice renders as binary PPM/PGM files.

Slices are taken perpendicular to ``axis``; image rows run along the
second in-plane axis (top row = highest index) and columns along the first,
so an axial (axis=2) slice shows x left-to-right and y bottom-to-top.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np


def direction_encoded_rgb(v1: np.ndarray, fa: np.ndarray) -> np.ndarray:
    """|V1| * FA per component as 8-bit RGB: red x, green y, blue z."""
    v1 = np.asarray(v1, dtype=np.float64)
    fa = np.asarray(fa, dtype=np.float64)
    if v1.shape[-1] != 3 or v1.shape[:-1] != fa.shape:
        raise ValueError(f"V1 shape {v1.shape} does not match FA shape {fa.shape} + (3,)")
    rgb = np.clip(np.abs(v1) * fa[..., None], 0.0, 1.0)
    return np.round(rgb * 255.0).astype(np.uint8)


def residual_gray(residual: np.ndarray, value_range: float) -> np.ndarray:
    """Map residuals to 8 bits: 0 -> 128, -range -> 0, +range -> 255 (clipped)."""
    if value_range <= 0:
        raise ValueError("residual range must be > 0")
    r = np.clip(np.asarray(residual, dtype=np.float64) / value_range, -1.0, 1.0)
    # piecewise so that both ends land exactly on 0 and 255
    out = np.where(r < 0, 128.0 + 128.0 * r, 128.0 + 127.0 * r)
    return np.round(out).astype(np.uint8)


def intensity_gray(image: np.ndarray, lo: float = 0.0, hi: Optional[float] = None) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    hi = float(image.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.round(np.clip((image - lo) / (hi - lo), 0, 1) * 255.0).astype(np.uint8)


def take_slice(volume: np.ndarray, axis: int, index: int) -> np.ndarray:
    """In-plane slice (first, second, ...) rearranged to image (row, col) order."""
    if not 0 <= index < volume.shape[axis]:
        raise IndexError(f"slice {index} out of range for axis {axis} of size {volume.shape[axis]}")
    sl = np.take(volume, index, axis=axis)
    return np.flip(np.swapaxes(sl, 0, 1), axis=0)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM needs a (rows, cols, 3) image, got {rgb.shape}")
    h, w = rgb.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError(f"PGM needs a 2D image, got {gray.shape}")
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read back a binary P5/P6 file written by this module."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    magic, (w, h), maxval = parts[0], map(int, parts[1].split()), int(parts[2])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported PNM header in {path}")
    data = np.frombuffer(parts[3], dtype=np.uint8)
    return data.reshape(h, w, 3) if magic == b"P6" else data.reshape(h, w)
