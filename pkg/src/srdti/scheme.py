"""Six-direction encoding schemes with minimal condition number.

The transformation matrix has one row per direction,
``[gx^2, gy^2, gz^2, 2 gx gy, 2 gx gz, 2 gy gz]``; the b-value scales every row
equally and cancels in the singular-value ratio.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .tensor import canonical_sign
from .volume import GradientTable

SQRT2 = np.sqrt(2.0)


def transformation_matrix(directions: np.ndarray, weighted: bool = False) -> np.ndarray:
    g = np.asarray(directions, dtype=np.float64)
    gx, gy, gz = g[..., 0], g[..., 1], g[..., 2]
    k = SQRT2 if weighted else 2.0
    return np.stack([gx * gx, gy * gy, gz * gz, k * gx * gy, k * gx * gz, k * gy * gz], -1)


def condition_number(directions, b: float = 1.0, weighted: bool = False):
    """sigma_max / sigma_min of the transformation matrix; +inf when singular.

    Accepts a single (6, 3) scheme or a batch (..., 6, 3). ``weighted`` uses
    the sqrt(2) off-diagonal convention, which is rotation invariant.
    """
    mats = transformation_matrix(directions, weighted) * b
    sv = np.linalg.svd(mats, compute_uv=False)
    smax, smin = sv[..., 0], sv[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(smin > smax * 1e-12, smax / np.where(smin > 0, smin, 1.0), np.inf)
    return float(cond) if cond.ndim == 0 else cond


@dataclass(frozen=True)
class EncodingScheme:
    directions: np.ndarray
    b: float = 1.0
    condition_number: float = float("nan")

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1) > 1e-6):
            raise ValueError("encoding directions must be unit vectors")
        object.__setattr__(self, "directions", d)
        if np.isnan(self.condition_number):
            object.__setattr__(self, "condition_number", condition_number(d))

    def table(self) -> GradientTable:
        return GradientTable(self.directions, np.full(len(self.directions), self.b))

    @classmethod
    def from_table(cls, table: GradientTable) -> "EncodingScheme":
        keep = table.bvalues > 0
        return cls(table.directions[keep], float(table.bvalues[keep][0]))


def _angles_to_dirs(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], -1)


def random_unit_sextets(n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, 6, 3))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def random_search_minimum(samples: int = 100_000, seed: int = 0, chunk: int = 20_000) -> float:
    """Smallest condition number among uniformly random unit sextets."""
    rng = np.random.default_rng(seed)
    best = np.inf
    left = samples
    while left > 0:
        n = min(chunk, left)
        best = min(best, float(np.min(condition_number(random_unit_sextets(n, rng)))))
        left -= n
    return best


def _descend(theta: np.ndarray, phi: np.ndarray, step: float = 0.1, min_step: float = 1e-6):
    """Coordinate-wise descent on the 12 angles with step halving."""
    params = np.concatenate([theta, phi])
    cost = condition_number(_angles_to_dirs(params[:6], params[6:]))
    while step >= min_step:
        improved = False
        for i in range(12):
            for delta in (step, -step):
                trial = params.copy()
                trial[i] += delta
                c = condition_number(_angles_to_dirs(trial[:6], trial[6:]))
                if c < cost:
                    params, cost, improved = trial, c, True
                    break
        if not improved:
            step *= 0.5
    return _angles_to_dirs(params[:6], params[6:]), cost


def optimize_directions(seed: int = 0, restarts: int = 16, b: float = 1.0) -> EncodingScheme:
    """Best-of-``restarts`` locally optimized sextet; deterministic given ``seed``."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best_dirs, best_cost = None, np.inf
    for start in random_unit_sextets(restarts, rng):
        theta = np.arccos(np.clip(start[:, 2], -1, 1))
        phi = np.arctan2(start[:, 1], start[:, 0])
        dirs, cost = _descend(theta, phi)
        if cost < best_cost:
            best_dirs, best_cost = dirs, cost
    dirs = canonical_sign(best_dirs)
    return EncodingScheme(dirs, b, condition_number(dirs))


def fibonacci_directions(n: int) -> np.ndarray:
    """Near-uniform hemisphere directions (for simulated acquisitions)."""
    i = np.arange(n) + 0.5
    z = 1.0 - i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], -1)

