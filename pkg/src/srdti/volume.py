"""Core data carriers: volumes, gradient tables and diffusion stacks.

Volumes hold a 3D array indexed ``data[i, j, k]`` (x, y, z); the on-disk
x-fastest ordering is handled by the I/O layer. World coordinates follow the
voxel-center convention ``origin + (index + 0.5) * spacing``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

Triple = Tuple[float, float, float]

# Fixed channel order of the network input; the output drops "t1".
CHANNEL_ORDER = ("b0", "dwi1", "dwi2", "dwi3", "dwi4", "dwi5", "dwi6", "t1")


class GeometryError(ValueError):
    """Raised when volumes or stacks violate their grid invariants."""


def _triple(values, name, cast=float) -> tuple:
    out = tuple(cast(v) for v in values)
    if len(out) != 3:
        raise GeometryError(f"{name} must have 3 components, got {len(out)}")
    return out


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid with physical spacing (mm) and origin (mm)."""

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.array(self.data, copy=True)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise GeometryError(f"volume data must be 3D with dims >= 1, got shape {data.shape}")
        data.setflags(write=False)
        spacing = _triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise GeometryError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _triple(self.origin, "origin"))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def fov(self) -> np.ndarray:
        return np.asarray(self.dims) * np.asarray(self.spacing)

    @property
    def center(self) -> np.ndarray:
        """World coordinate of the field-of-view center."""
        return np.asarray(self.origin) + 0.5 * self.fov

    def axis_coords(self, axis: int) -> np.ndarray:
        """World coordinates of voxel centers along one axis."""
        n = self.dims[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.spacing[axis]

    def world(self, index) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(index, dtype=float) + 0.5) * np.asarray(self.spacing)

    def same_grid(self, other: "Volume") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=0, atol=1e-9)
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-9)
        )

    def with_data(self, data) -> "Volume":
        """New volume on the same grid."""
        data = np.asarray(data)
        if data.shape != self.dims:
            raise GeometryError(f"shape {data.shape} does not match grid {self.dims}")
        return Volume(data, self.spacing, self.origin)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True)
class Grid:
    """Grid geometry without data, used as a resampling target."""

    dims: Tuple[int, int, int]
    spacing: Triple
    origin: Triple

    @classmethod
    def of(cls, volume: Volume) -> "Grid":
        return cls(volume.dims, volume.spacing, volume.origin)

    @classmethod
    def centered(cls, dims, spacing, center) -> "Grid":
        """Grid with the given FOV center (voxel-center convention)."""
        dims = _triple(dims, "dims", int)
        spacing = _triple(spacing, "spacing")
        origin = np.asarray(center, dtype=float) - 0.5 * np.asarray(dims) * np.asarray(spacing)
        return cls(dims, spacing, tuple(float(o) for o in origin))

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing[axis]

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.origin) + 0.5 * np.asarray(self.dims) * np.asarray(self.spacing)


@dataclass(frozen=True)
class GradientTable:
    """Unit gradient directions with b-values in ms/um^2."""

    directions: np.ndarray
    bvalues: np.ndarray

    def __post_init__(self):
        dirs = np.array(self.directions, dtype=np.float64).reshape(-1, 3)
        bvals = np.array(self.bvalues, dtype=np.float64).reshape(-1)
        if len(dirs) != len(bvals):
            raise GeometryError(f"{len(dirs)} directions but {len(bvals)} b-values")
        norms = np.linalg.norm(dirs, axis=1)
        zero = norms == 0
        if np.any(zero & (bvals != 0)):
            raise GeometryError("zero direction paired with non-zero b-value")
        if np.any(np.abs(norms[~zero] - 1) > 1e-6):
            raise GeometryError("gradient directions must be unit vectors")
        dirs.setflags(write=False)
        bvals.setflags(write=False)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "bvalues", bvals)

    def __len__(self):
        return len(self.bvalues)


@dataclass(frozen=True)
class DwiStack:
    """b=0 volume, diffusion-weighted volumes, their gradient table and optional T1/mask."""

    b0: Volume
    dwis: Tuple[Volume, ...]
    table: GradientTable
    t1: Optional[Volume] = None
    mask: Optional[Volume] = None

    def __post_init__(self):
        dwis = tuple(self.dwis)
        object.__setattr__(self, "dwis", dwis)
        if len(dwis) != len(self.table):
            raise GeometryError(f"{len(dwis)} DWIs but gradient table has {len(self.table)} entries")
        for name, vol in self.members():
            if not vol.same_grid(self.b0):
                raise GeometryError(f"{name} is not on the b0 grid")

    def members(self):
        """(name, volume) pairs for every present member volume."""
        out = [("b0", self.b0)]
        out += [(f"dwi{i + 1}", v) for i, v in enumerate(self.dwis)]
        if self.t1 is not None:
            out.append(("t1", self.t1))
        if self.mask is not None:
            out.append(("mask", self.mask))
        return out

    @property
    def grid(self) -> Grid:
        return Grid.of(self.b0)

    def diffusion_array(self) -> np.ndarray:
        """(1 + N, X, Y, Z) array of b0 followed by DWIs."""
        return np.stack([self.b0.data] + [v.data for v in self.dwis])

    def replace(self, **changes) -> "DwiStack":
        fields = dict(b0=self.b0, dwis=self.dwis, table=self.table, t1=self.t1, mask=self.mask)
        fields.update(changes)
        return DwiStack(**fields)

    @classmethod
    def from_arrays(cls, diffusion: np.ndarray, table: GradientTable, like: Volume,
                    t1: Optional[Volume] = None, mask: Optional[Volume] = None) -> "DwiStack":
        vols = [like.with_data(a) for a in diffusion]
        return cls(vols[0], tuple(vols[1:]), table, t1, mask)


@dataclass(frozen=True)
class BlockSpec:
    """Block edge lengths and overlap, both in voxels."""

    block: Tuple[int, int, int] = (64, 64, 64)
    overlap: Tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        block = _triple(self.block, "block", int)
        overlap = _triple(self.overlap, "overlap", int)
        for b, v in zip(block, overlap):
            if b < 1 or not 0 <= v < b:
                raise GeometryError(f"need 0 <= overlap < block, got block={block} overlap={overlap}")
        object.__setattr__(self, "block", block)
        object.__setattr__(self, "overlap", overlap)

    @property
    def stride(self) -> Tuple[int, int, int]:
        return tuple(b - v for b, v in zip(self.block, self.overlap))


@dataclass(frozen=True)
class ScaleRecord:
    """Scalars dividing the diffusion channels and T1 during normalization."""

    diffusion: float
    t1: Optional[float] = None


class NormalizationError(ValueError):
    pass


def normalize_stack(stack: DwiStack) -> Tuple[DwiStack, ScaleRecord]:
    """Scale b0 and DWIs by the b0 maximum, and T1 by its own maximum.

    A single shared scale keeps every DWI/b0 ratio unchanged.
    """
    s = float(np.max(stack.b0.data))
    if not s > 0:
        raise NormalizationError("b0 has no positive voxel; cannot normalize")
    b0 = stack.b0.with_data(stack.b0.data / s)
    dwis = tuple(v.with_data(v.data / s) for v in stack.dwis)
    t1 = stack.t1
    s_t1 = None
    if t1 is not None:
        s_t1 = float(np.max(t1.data))
        if not s_t1 > 0:
            raise NormalizationError("T1 has no positive voxel; cannot normalize")
        t1 = t1.with_data(t1.data / s_t1)
    return stack.replace(b0=b0, dwis=dwis, t1=t1), ScaleRecord(s, s_t1)


def denormalize_stack(stack: DwiStack, record: ScaleRecord) -> DwiStack:
    s = record.diffusion
    changes = dict(
        b0=stack.b0.with_data(stack.b0.data * s),
        dwis=tuple(v.with_data(v.data * s) for v in stack.dwis),
    )
    if stack.t1 is not None and record.t1 is not None:
        changes["t1"] = stack.t1.with_data(stack.t1.data * record.t1)
    return stack.replace(**changes)


def stack_volumes(vols: Sequence[Volume]) -> np.ndarray:
    return np.stack([v.data for v in vols])
