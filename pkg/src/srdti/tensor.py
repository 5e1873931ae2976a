"""Diffusion tensor model: log-linear fitting, signal synthesis and scalar maps.

Tensor components are stored channel-first as (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz)
in um^2/ms; b-values are in ms/um^2.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

from .volume import DwiStack, GradientTable, Volume

if TYPE_CHECKING:
    from .scheme import EncodingScheme

SIGNAL_FLOOR = 1e-6
COMPONENTS = ("Dxx", "Dyy", "Dzz", "Dxy", "Dxz", "Dyz")


class SingularDesignError(ValueError):
    pass


@dataclass(frozen=True)
class TensorField:
    """Per-voxel tensor components, shape (6, X, Y, Z), plus the S0 map."""

    components: np.ndarray
    s0: Volume

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=np.float64)
        if comps.shape != (6,) + self.s0.dims:
            raise ValueError(f"components shape {comps.shape} does not match S0 grid {self.s0.dims}")
        object.__setattr__(self, "components", comps)

    def matrices(self) -> np.ndarray:
        """(X, Y, Z, 3, 3) symmetric tensors."""
        return components_to_matrix(np.moveaxis(self.components, 0, -1))

    @classmethod
    def from_matrices(cls, mats: np.ndarray, s0: Volume) -> "TensorField":
        return cls(np.moveaxis(matrix_to_components(mats), -1, 0), s0)


def components_to_matrix(c: np.ndarray) -> np.ndarray:
    xx, yy, zz, xy, xz, yz = (c[..., i] for i in range(6))
    return np.stack([
        np.stack([xx, xy, xz], -1),
        np.stack([xy, yy, yz], -1),
        np.stack([xz, yz, zz], -1),
    ], -2)


def matrix_to_components(m: np.ndarray) -> np.ndarray:
    return np.stack([m[..., 0, 0], m[..., 1, 1], m[..., 2, 2],
                     m[..., 0, 1], m[..., 0, 2], m[..., 1, 2]], -1)


def _full_table(table: GradientTable) -> GradientTable:
    """Prepend the b=0 measurement that DwiStack keeps separately."""
    dirs = np.vstack([np.zeros((1, 3)), table.directions])
    return GradientTable(dirs, np.concatenate([[0.0], table.bvalues]))


def design_matrix(table: GradientTable) -> np.ndarray:
    """(N, 7) matrix mapping (Dxx..Dyz, ln S0) to ln S."""
    g = table.directions
    b = table.bvalues
    gx, gy, gz = g[:, 0], g[:, 1], g[:, 2]
    return np.column_stack([
        -b * gx * gx, -b * gy * gy, -b * gz * gz,
        -2 * b * gx * gy, -2 * b * gx * gz, -2 * b * gy * gz,
        np.ones(len(b)),
    ])


def _check_rank(A: np.ndarray) -> None:
    rank = np.linalg.matrix_rank(A)
    if rank < 7:
        raise SingularDesignError(
            f"design matrix has rank {rank} < 7 ({len(A)} measurements); "
            f"the gradient table cannot determine all six tensor components and S0")


def fit_tensor(stack: DwiStack, mask: Optional[Volume] = None) -> TensorField:
    """Ordinary least-squares fit of ln(max(S, 1e-6)) against the design matrix.

    The b0 volume counts as one b=0 measurement. Voxels outside the mask, or
    whose signals are all at or below the floor, get a zero tensor and S0 = 0.
    """
    A = design_matrix(_full_table(stack.table))
    _check_rank(A)
    pinv = np.linalg.pinv(A)
    signals = stack.diffusion_array().astype(np.float64)           # (N, X, Y, Z)
    logs = np.log(np.maximum(signals, SIGNAL_FLOOR))
    coef = np.tensordot(pinv, logs, axes=(1, 0))                    # (7, X, Y, Z)
    comps = coef[:6]
    s0 = np.exp(coef[6])
    if mask is None:
        mask = stack.mask
    keep = np.any(signals > SIGNAL_FLOOR, axis=0)
    if mask is not None:
        keep &= mask.data > 0
    comps = np.where(keep, comps, 0.0)
    s0 = np.where(keep, s0, 0.0)
    return TensorField(comps, stack.b0.with_data(s0))


def synthesize_dwi(field: TensorField, scheme: Union["EncodingScheme", GradientTable],
                   t1: Optional[Volume] = None, mask: Optional[Volume] = None) -> DwiStack:
    """Signals S_i = S0 exp(-b g_i^T D g_i) along each scheme direction."""
    table = scheme.table() if hasattr(scheme, "table") and callable(scheme.table) else scheme
    rows = -design_matrix(table)[:, :6]                              # b * quadratic form weights
    s0 = field.s0.data.astype(np.float64)
    adc = np.tensordot(rows, field.components, axes=(1, 0))          # (N, X, Y, Z)
    signals = s0[None] * np.exp(-adc)
    b0 = field.s0.with_data(s0)
    dwis = tuple(field.s0.with_data(s) for s in signals)
    return DwiStack(b0, dwis, table, t1, mask)


# --- eigen-decomposition ----------------------------------------------------

def jacobi_eigh(mats: np.ndarray, tol: float = 1e-12, max_sweeps: int = 50):
    """Cyclic Jacobi eigen-decomposition of a batch of symmetric 3x3 matrices.

    Returns eigenvalues sorted descending, shape (..., 3), and eigenvectors as
    columns, shape (..., 3, 3). Iterates until the off-diagonal norm drops
    below ``tol`` times the Frobenius norm.
    """
    mats = np.asarray(mats, dtype=np.float64)
    batch = mats.shape[:-2]
    A = mats.reshape(-1, 3, 3).copy()
    V = np.broadcast_to(np.eye(3), A.shape).copy()
    scale = np.sqrt(np.sum(A * A, axis=(1, 2)))
    thresh = tol * np.where(scale > 0, scale, 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(2 * (A[:, 0, 1] ** 2 + A[:, 0, 2] ** 2 + A[:, 1, 2] ** 2))
        active = off > thresh
        if not np.any(active):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = A[:, p, q]
            rotate = active & (apq != 0)
            if not np.any(rotate):
                continue
            theta = np.where(rotate, (A[:, q, q] - A[:, p, p]) / (2 * np.where(rotate, apq, 1.0)), 0.0)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta == 0, 1.0, t)
            t = np.where(rotate, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            J = np.broadcast_to(np.eye(3), A.shape).copy()
            J[:, p, p] = c
            J[:, q, q] = c
            J[:, p, q] = s
            J[:, q, p] = -s
            A = np.einsum("nji,njk,nkl->nil", J, A, J)
            A[:, p, q] = A[:, q, p] = np.where(rotate, 0.0, A[:, p, q])
            V = np.einsum("nij,njk->nik", V, J)
    evals = np.stack([A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]], -1)
    order = np.argsort(-evals, axis=1, kind="stable")
    evals = np.take_along_axis(evals, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return evals.reshape(batch + (3,)), V.reshape(batch + (3, 3))


def canonical_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip vectors so their largest-magnitude component is positive."""
    vectors = np.asarray(vectors, dtype=np.float64)
    idx = np.argmax(np.abs(vectors), axis=-1)
    lead = np.take_along_axis(vectors, idx[..., None], axis=-1)
    return np.where(lead < 0, -vectors, vectors)


@dataclass(frozen=True)
class DtiMaps:
    """Scalar and vector maps; arrays are (X, Y, Z) except v1 (X, Y, Z, 3)."""

    v1: np.ndarray
    fa: np.ndarray
    md: np.ndarray
    ad: np.ndarray
    rd: np.ndarray
    evals: np.ndarray
    mask: np.ndarray


def fractional_anisotropy(evals: np.ndarray) -> np.ndarray:
    md = evals.mean(axis=-1, keepdims=True)
    num = np.sum((evals - md) ** 2, axis=-1)
    den = np.sum(evals ** 2, axis=-1)
    safe = den >= 1e-20
    return np.where(safe, np.sqrt(1.5) * np.sqrt(num) / np.sqrt(np.where(safe, den, 1.0)), 0.0)


def dti_maps(field: TensorField, mask=None) -> DtiMaps:
    """Eigen-decompose every masked voxel and derive V1, FA, MD, AD and RD."""
    shape = field.s0.dims
    if mask is None:
        m = np.ones(shape, dtype=bool)
    else:
        m = np.asarray(mask.data if isinstance(mask, Volume) else mask) > 0
    evals = np.zeros(shape + (3,))
    v1 = np.zeros(shape + (3,))
    if np.any(m):
        mats = field.matrices()[m]
        vals, vecs = jacobi_eigh(mats)
        evals[m] = vals
        v1[m] = canonical_sign(vecs[..., :, 0])
    fa = np.where(m, fractional_anisotropy(evals), 0.0)
    md = evals.mean(axis=-1)
    ad = evals[..., 0]
    rd = 0.5 * (evals[..., 1] + evals[..., 2])
    return DtiMaps(v1=v1, fa=fa, md=md, ad=ad, rd=rd, evals=evals, mask=m)


def axisymmetric_eigenvalues(fa, md):
    """(lambda_parallel, lambda_perp) of cylindrically symmetric tensors with
    the requested FA and MD (closed-form inversion of the FA formula)."""
    fa = np.asarray(fa, dtype=np.float64)
    md = np.asarray(md, dtype=np.float64)
    if np.any((fa < 0) | (fa > 1)):
        raise ValueError("FA must lie in [0, 1]")
    delta = md * fa * np.sqrt(3.0 / (9.0 - 6.0 * fa * fa))
    return md + 2 * delta, md - delta


def axisymmetric_tensor(direction, fa, md) -> np.ndarray:
    """(..., 3, 3) tensors lam_perp * I + (lam_par - lam_perp) * d d^T."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    lpar, lperp = axisymmetric_eigenvalues(fa, md)
    outer = d[..., :, None] * d[..., None, :]
    return lperp[..., None, None] * np.eye(3) + (lpar - lperp)[..., None, None] * outer
