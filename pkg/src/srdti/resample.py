"""Volume resampling: Fourier-cropping sinc degradation and the trilinear /
cubic B-spline upsamplers used as baselines and as network input.

All three operators are separable. Each axis is handled by a small dense
matrix mapping source samples to target samples, applied with ``tensordot``.
Target grids share the source field-of-view center.
"""
from __future__ import annotations

import math
from typing import Union

import numpy as np

from .volume import DwiStack, GeometryError, Grid, Volume

SPLINE_POLE = math.sqrt(3.0) - 2.0


def _apply_axis(array: np.ndarray, matrix: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(matrix, array, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _as_grid(target) -> Grid:
    if isinstance(target, Grid):
        return target
    if isinstance(target, Volume):
        return Grid.of(target)
    raise TypeError(f"expected Grid or Volume, got {type(target).__name__}")


def downsampled_grid(v: Volume, target_spacing) -> Grid:
    """Grid at ``target_spacing`` covering the same FOV, center preserved."""
    dims = tuple(max(1, int(round(n * h / H))) for n, h, H in zip(v.dims, v.spacing, target_spacing))
    return Grid.centered(dims, target_spacing, v.center)


# --- sinc -------------------------------------------------------------------

def _sinc_matrix(n: int, h: float, x0: float, m: int, targets: np.ndarray) -> np.ndarray:
    """(m, n) real matrix: band-limit an n-sample periodic signal to m modes and
    evaluate the result at the target coordinates."""
    length = n * h
    modes = np.arange(-(m // 2), m // 2 + 1)
    weights = np.ones(len(modes))
    if m % 2 == 0:
        weights[0] = weights[-1] = 0.5  # Nyquist split keeps real inputs real
    # coefficient c_k = (1/n) sum_i x_i exp(-2 pi i k i / n)
    idx = np.arange(n)
    analysis = np.exp(-2j * np.pi * np.outer(modes, idx) / n) / n
    synthesis = np.exp(2j * np.pi * np.outer(targets - x0, modes) / length)
    return ((synthesis * weights) @ analysis).real


def sinc_downsample(v: Volume, target_spacing) -> Volume:
    """Degrade ``v`` to a coarser grid by spectral truncation.

    Equivalent to a forward FFT, symmetric cropping of the spectrum to the
    target mode set and an inverse transform on the target grid. Constants are
    preserved and every mode below the target Nyquist frequency is reproduced.
    """
    target_spacing = tuple(float(s) for s in target_spacing)
    if len(target_spacing) != 3:
        raise GeometryError("target spacing must have 3 components")
    for h, H in zip(v.spacing, target_spacing):
        if H < h - 1e-12:
            raise GeometryError(
                f"target spacing {target_spacing} is finer than source {v.spacing}; sinc_downsample only degrades")
    grid = downsampled_grid(v, target_spacing)
    data = np.asarray(v.data, dtype=np.float64)
    for axis in range(3):
        n, m = v.dims[axis], grid.dims[axis]
        if n == m and target_spacing[axis] == v.spacing[axis]:
            continue
        mat = _sinc_matrix(n, v.spacing[axis], v.axis_coords(axis)[0], m, grid.axis_coords(axis))
        data = _apply_axis(data, mat, axis)
    return Volume(data, grid.spacing, grid.origin)


# --- interpolators ----------------------------------------------------------

def _source_index(v_origin: float, h: float, n: int, coords: np.ndarray) -> np.ndarray:
    """Continuous source index of world coordinates, clamped to the sample hull."""
    u = (coords - v_origin) / h - 0.5
    return np.clip(u, 0.0, n - 1.0)


def _linear_matrix(n: int, u: np.ndarray) -> np.ndarray:
    mat = np.zeros((len(u), n))
    rows = np.arange(len(u))
    if n == 1:
        mat[:, 0] = 1.0
        return mat
    i0 = np.minimum(np.floor(u).astype(int), n - 2)
    t = u - i0
    np.add.at(mat, (rows, i0), 1.0 - t)
    np.add.at(mat, (rows, i0 + 1), t)
    return mat


def trilinear_resample(v: Volume, target: Union[Grid, Volume]) -> Volume:
    """Trilinear interpolation at the target voxel centers (edge-clamped)."""
    grid = _as_grid(target)
    data = np.asarray(v.data, dtype=np.float64)
    for axis in range(3):
        u = _source_index(v.origin[axis], v.spacing[axis], v.dims[axis], grid.axis_coords(axis))
        data = _apply_axis(data, _linear_matrix(v.dims[axis], u), axis)
    return Volume(data, grid.spacing, grid.origin)


def bspline3(x):
    """Centered cubic B-spline kernel."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(a < 1, 2.0 / 3.0 - a ** 2 + 0.5 * a ** 3,
                    np.where(a < 2, (2.0 - a) ** 3 / 6.0, 0.0))


def bspline_prefilter_1d(data: np.ndarray, axis: int) -> np.ndarray:
    """Interpolating cubic B-spline coefficients along one axis.

    Causal/anticausal recursion with pole sqrt(3) - 2 and mirror-symmetric
    boundaries (whole-sample symmetry, period 2n - 2).
    """
    z = SPLINE_POLE
    x = np.moveaxis(np.asarray(data, dtype=np.float64), axis, 0)
    n = x.shape[0]
    if n < 4:
        raise GeometryError(f"cubic B-spline needs >= 4 samples per axis, got {n}; zero-pad upstream")
    k = np.arange(n)
    w = z ** k + z ** (2 * n - 2 - k)
    w[0] = 1.0
    w[-1] = z ** (n - 1)
    cp = np.empty_like(x)
    cp[0] = np.tensordot(w, x, axes=(0, 0)) / (1.0 - z ** (2 * n - 2))
    for i in range(1, n):
        cp[i] = x[i] + z * cp[i - 1]
    cm = np.empty_like(x)
    cm[-1] = (z / (z * z - 1.0)) * (cp[-1] + z * cp[-2])
    for i in range(n - 2, -1, -1):
        cm[i] = z * (cm[i + 1] - cp[i])
    return np.moveaxis(6.0 * cm, 0, axis)


def bspline_coefficients(data: np.ndarray) -> np.ndarray:
    out = np.asarray(data, dtype=np.float64)
    for axis in range(out.ndim):
        out = bspline_prefilter_1d(out, axis)
    return out


def _mirror(idx: np.ndarray, n: int) -> np.ndarray:
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _cubic_matrix(n: int, u: np.ndarray) -> np.ndarray:
    mat = np.zeros((len(u), n))
    rows = np.arange(len(u))
    base = np.floor(u).astype(int)
    for offset in (-1, 0, 1, 2):
        k = base + offset
        np.add.at(mat, (rows, _mirror(k, n)), bspline3(u - k))
    return mat


def cubic_bspline_resample(v: Volume, target: Union[Grid, Volume]) -> Volume:
    """Interpolating cubic B-spline resampling (exact at source voxel centers)."""
    grid = _as_grid(target)
    coeffs = bspline_coefficients(v.data)
    for axis in range(3):
        u = _source_index(v.origin[axis], v.spacing[axis], v.dims[axis], grid.axis_coords(axis))
        coeffs = _apply_axis(coeffs, _cubic_matrix(v.dims[axis], u), axis)
    return Volume(coeffs, grid.spacing, grid.origin)


RESAMPLERS = {
    "trilinear": trilinear_resample,
    "cubic": cubic_bspline_resample,
}


def resample_stack(stack: DwiStack, method: str, target: Union[Grid, Volume],
                   t1: Volume = None, mask: Volume = None) -> DwiStack:
    """Upsample the diffusion channels of ``stack`` onto ``target``.

    T1 and mask are taken from the keyword arguments (they normally live on
    the target grid already), not resampled.
    """
    try:
        fn = RESAMPLERS[method]
    except KeyError:
        raise ValueError(f"unknown interpolation method {method!r}; choose from {sorted(RESAMPLERS)}") from None
    b0 = fn(stack.b0, target)
    dwis = tuple(fn(d, target) for d in stack.dwis)
    return DwiStack(b0, dwis, stack.table, t1, mask)


def downsample_stack(stack: DwiStack, target_spacing) -> DwiStack:
    """Sinc-degrade the b0 and DWI channels; T1 and mask are dropped."""
    b0 = sinc_downsample(stack.b0, target_spacing)
    dwis = tuple(sinc_downsample(d, target_spacing) for d in stack.dwis)
    return DwiStack(b0, dwis, stack.table)
