"""Overlapping block extraction and uniform-average reassembly."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .volume import BlockSpec, GeometryError


@dataclass(frozen=True)
class TileLayout:
    """Where blocks came from, so assembly can invert extraction."""

    spec: BlockSpec
    shape: Tuple[int, int, int]          # original spatial shape
    pad_before: Tuple[int, int, int]
    padded: Tuple[int, int, int]
    corners: Tuple[Tuple[int, int, int], ...]   # block corners in padded coordinates

    @property
    def pad_after(self):
        return tuple(p - s - b for p, s, b in zip(self.padded, self.shape, self.pad_before))

    @property
    def counts(self):
        return tuple(len({c[a] for c in self.corners}) for a in range(3))


def plan_tiles(shape, spec: BlockSpec) -> TileLayout:
    """Window corners per axis: one window per stride start inside the volume,
    zero-padding symmetrically so the last (partial) window fits."""
    pad_before, padded, starts = [], [], []
    for n, b, s in zip(shape, spec.block, spec.stride):
        count = 1 if n <= b else math.ceil(n / s)
        total = b + (count - 1) * s
        pad_before.append((total - n) // 2)
        padded.append(total)
        starts.append([i * s for i in range(count)])
    corners = tuple(itertools.product(*starts))
    return TileLayout(spec, tuple(int(n) for n in shape), tuple(pad_before), tuple(padded), corners)


def extract_blocks(array: np.ndarray, spec: BlockSpec) -> Tuple[np.ndarray, TileLayout]:
    """Cut a (C, X, Y, Z) array into overlapping (N, C, bx, by, bz) blocks."""
    if array.ndim != 4:
        raise GeometryError(f"expected a (C, X, Y, Z) array, got shape {array.shape}")
    layout = plan_tiles(array.shape[1:], spec)
    pad = [(0, 0)] + [(b, a) for b, a in zip(layout.pad_before, layout.pad_after)]
    padded = np.pad(array, pad) if any(p != (0, 0) for p in pad) else array
    bx, by, bz = spec.block
    blocks = np.stack([padded[:, i:i + bx, j:j + by, k:k + bz] for i, j, k in layout.corners])
    return blocks, layout


def assemble_blocks(blocks: np.ndarray, layout: TileLayout) -> np.ndarray:
    """Average block contributions per voxel, then crop the recorded padding."""
    blocks = np.asarray(blocks)
    if blocks.ndim != 5 or blocks.shape[0] != len(layout.corners) or blocks.shape[2:] != layout.spec.block:
        raise GeometryError(
            f"blocks of shape {blocks.shape} do not match layout "
            f"({len(layout.corners)} blocks of {layout.spec.block})")
    channels = blocks.shape[1]
    acc = np.zeros((channels,) + layout.padded, dtype=np.float64)
    weight = np.zeros(layout.padded, dtype=np.float64)
    bx, by, bz = layout.spec.block
    # fixed accumulation order (block index) keeps the result schedule-independent
    for block, (i, j, k) in zip(blocks, layout.corners):
        acc[:, i:i + bx, j:j + by, k:k + bz] += block
        weight[i:i + bx, j:j + by, k:k + bz] += 1.0
    acc /= weight
    x0, y0, z0 = layout.pad_before
    nx, ny, nz = layout.shape
    return acc[:, x0:x0 + nx, y0:y0 + ny, z0:z0 + nz].astype(blocks.dtype)


def block_tiling(arrays, spec: BlockSpec, mode: str = "extract", layout: TileLayout = None):
    """Dispatch to :func:`extract_blocks` or :func:`assemble_blocks`."""
    if mode == "extract":
        return extract_blocks(arrays, spec)
    if mode == "assemble":
        if layout is None or layout.spec != spec:
            raise GeometryError("assemble needs the layout produced by extraction with the same spec")
        return assemble_blocks(arrays, layout)
    raise ValueError(f"unknown tiling mode {mode!r}")


def block_weights(layout: TileLayout) -> np.ndarray:
    """Per-voxel contribution counts over the padded grid."""
    weight = np.zeros(layout.padded)
    bx, by, bz = layout.spec.block
    for i, j, k in layout.corners:
        weight[i:i + bx, j:j + by, k:k + bz] += 1.0
    return weight

