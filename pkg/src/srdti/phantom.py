"""Synthetic brain-like ground truth: tissue labels, tensors, T1 and mask.

Geometry is an ellipsoidal head with an outer CSF shell, a folded cortical
ribbon, white matter whose fibres follow smooth arcs and a few tubular
bundles, a small central ventricle and a striated slab alternating white
matter and gray bridges.

Tissue constants are fixed physiological-range defaults, not measured values.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from .tensor import TensorField, axisymmetric_tensor, synthesize_dwi
from .volume import DwiStack, Volume

BACKGROUND, CSF, CORTEX, WHITE, DEEP_GRAY = 0, 1, 2, 3, 4

# label: (MD um^2/ms, FA, S0, T1 level)
TISSUES = {
    CSF: (3.0, 0.0, 1.0, 0.2),
    CORTEX: (0.8, 0.2, 0.8, 0.6),
    WHITE: (0.75, 0.75, 0.65, 1.0),
    DEEP_GRAY: (0.8, 0.2, 0.8, 0.6),
}


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int] = (64, 64, 64)
    spacing: Tuple[float, float, float] = (1.25, 1.25, 1.25)
    seed: int = 0
    noise_sigma: float = 0.0
    noise: str = "rician"
    stripe_period: float = 3.0   # voxels
    n_b0: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if min(self.dims) < 32:
            raise ValueError(f"phantom dims must be >= 32 per axis, got {self.dims}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.noise not in ("rician", "gaussian"):
            raise ValueError(f"noise must be 'rician' or 'gaussian', got {self.noise!r}")
        if self.stripe_period <= 0 or self.n_b0 < 1:
            raise ValueError("stripe_period must be > 0 and n_b0 >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"], d["spacing"] = list(self.dims), list(self.spacing)
        return d


@dataclass(frozen=True)
class Phantom:
    labels: Volume
    field: TensorField
    t1: Volume
    mask: Volume
    spec: PhantomSpec
    striated: Volume


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def _random_unit(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def _perpendicular(n: np.ndarray, rng) -> np.ndarray:
    v = np.cross(n, _random_unit(rng))
    return v / np.linalg.norm(v)


def _tent_blur(data: np.ndarray) -> np.ndarray:
    """One pass of the separable [1/4, 1/2, 1/4] (linear B-spline) kernel."""
    out = data
    for axis in range(3):
        pad = [(0, 0)] * 3
        pad[axis] = (1, 1)
        p = np.pad(out, pad, mode="edge")
        sl = lambda a, b: tuple(slice(a, b) if i == axis else slice(None) for i in range(3))
        n = out.shape[axis]
        out = 0.25 * p[sl(0, n)] + 0.5 * p[sl(1, n + 1)] + 0.25 * p[sl(2, n + 2)]
    return out


def make_phantom(spec: PhantomSpec = PhantomSpec()) -> Phantom:
    """Build a deterministic (per seed) phantom on the spec's grid."""
    rng = np.random.default_rng(spec.seed)
    dims = np.asarray(spec.dims)
    spacing = np.asarray(spec.spacing)
    fov = dims * spacing
    origin = -0.5 * fov
    axes = [origin[a] + (np.arange(dims[a]) + 0.5) * spacing[a] for a in range(3)]
    p = np.stack(np.meshgrid(*axes, indexing="ij"), -1)             # world mm, FOV centered at 0

    radii = np.array([0.44, 0.40, 0.36]) * fov * (1 + 0.05 * rng.uniform(-1, 1, 3))
    u = p / radii
    r = np.linalg.norm(u, axis=-1)
    radial = _unit(p / radii ** 2)                                  # ellipsoid surface normal direction

    # folded cortex: inner boundary modulated by low-order angular waves
    theta = np.arccos(np.clip(u[..., 2] / np.maximum(r, 1e-12), -1, 1))
    phi = np.arctan2(u[..., 1], u[..., 0])
    fold = np.zeros_like(r)
    for _ in range(3):
        a, b = rng.integers(3, 8, 2)
        fold += np.sin(a * theta + rng.uniform(0, 2 * np.pi)) * np.cos(b * phi + rng.uniform(0, 2 * np.pi))
    inner = 0.78 + 0.04 * fold / 3

    labels = np.zeros(spec.dims, dtype=np.int16)
    labels[r <= 1.0] = CSF
    labels[r <= 0.92] = CORTEX
    labels[r <= inner] = WHITE

    # white-matter orientation: arcs around a random axis through a random center
    axis = _random_unit(rng)
    center = rng.uniform(-0.1, 0.1, 3) * fov
    v1 = np.cross(axis, p - center)
    weak = np.linalg.norm(v1, axis=-1) < 1e-6
    v1[weak] = _perpendicular(axis, rng)
    v1 = _unit(v1)

    # tubular bundles along circular arcs
    for _ in range(3):
        n = _random_unit(rng)
        c = rng.uniform(-0.15, 0.15, 3) * fov
        rad = rng.uniform(0.15, 0.3) * fov.min()
        tube = rng.uniform(2.0, 3.5)
        d = p - c
        along = d - np.sum(d * n, axis=-1, keepdims=True) * n
        ring = rad * _unit(along)
        dist = np.linalg.norm(d - ring, axis=-1)
        inside = (dist < tube) & (labels == WHITE)
        v1[inside] = _unit(np.cross(n, along))[inside]

    # striated slab: fibres run along ``run``, gray bridges stacked along ``normal``
    normal = _random_unit(rng)
    run = _perpendicular(normal, rng)
    slab_center = rng.uniform(-0.08, 0.08, 3) * fov
    half = np.array([0.12, 0.12, 0.09]) * fov
    q = p - slab_center
    in_slab = np.all(np.abs(q) <= half, axis=-1) & (labels == WHITE)
    period_mm = spec.stripe_period * spacing.min()
    phase = np.floor(2.0 * np.sum(q * normal, axis=-1) / period_mm).astype(int) % 2
    labels[in_slab & (phase == 1)] = DEEP_GRAY
    v1[in_slab] = run

    # central ventricle
    vent = np.linalg.norm((p - center * 0.5) / (np.array([0.12, 0.06, 0.06]) * fov), axis=-1) <= 1.0
    labels[vent & (labels != BACKGROUND)] = CSF

    cortex = labels == CORTEX
    v1[cortex] = radial[cortex]

    md = np.zeros(spec.dims)
    fa = np.zeros(spec.dims)
    s0 = np.zeros(spec.dims)
    t1 = np.zeros(spec.dims)
    for label, (md_t, fa_t, s0_t, t1_t) in TISSUES.items():
        sel = labels == label
        md[sel], fa[sel], s0[sel], t1[sel] = md_t, fa_t, s0_t, t1_t
    mats = axisymmetric_tensor(v1, fa, md)
    mats[labels == BACKGROUND] = 0.0
    csf = labels == CSF
    mats[csf] = TISSUES[CSF][0] * np.eye(3)

    o = tuple(float(x) for x in origin)
    s = tuple(float(x) for x in spacing)
    like = Volume(s0, s, o)
    field = TensorField.from_matrices(mats, like)
    return Phantom(
        labels=Volume(labels.astype(np.float64), s, o),
        field=field,
        t1=Volume(_tent_blur(t1), s, o),
        mask=Volume((labels != BACKGROUND).astype(np.float64), s, o),
        spec=spec,
        striated=Volume((in_slab & ~vent).astype(np.float64), s, o),
    )


def add_noise(signal: np.ndarray, sigma: float, rng: np.random.Generator, kind: str = "rician") -> np.ndarray:
    """Rician: |S + sigma (n1 + i n2)|; Gaussian: S + sigma n1."""
    if sigma == 0:
        return np.array(signal, dtype=np.float64)
    n1 = rng.standard_normal(signal.shape)
    if kind == "gaussian":
        return signal + sigma * n1
    n2 = rng.standard_normal(signal.shape)
    return np.sqrt((signal + sigma * n1) ** 2 + (sigma * n2) ** 2)


def noisy_stack(stack: DwiStack, sigma: float, n_b0: int, rng: np.random.Generator,
                kind: str = "rician") -> DwiStack:
    """Add independent noise to every DWI; the b0 becomes the mean of ``n_b0``
    independently noised copies of the clean b0."""
    if sigma == 0:
        return stack
    b0 = np.mean([add_noise(stack.b0.data, sigma, rng, kind) for _ in range(n_b0)], axis=0)
    dwis = tuple(d.with_data(add_noise(d.data, sigma, rng, kind)) for d in stack.dwis)
    return stack.replace(b0=stack.b0.with_data(b0), dwis=dwis)


def render_dwis(phantom: Phantom, scheme, n_b0: Optional[int] = None, noise_sigma: Optional[float] = None,
                noise: Optional[str] = None, seed: Optional[int] = None) -> DwiStack:
    """Synthesize the phantom's DWIs along ``scheme`` and optionally add noise.

    ``scheme`` is an EncodingScheme or GradientTable. Unset arguments fall
    back to the phantom spec.
    """
    spec = phantom.spec
    n_b0 = spec.n_b0 if n_b0 is None else n_b0
    sigma = spec.noise_sigma if noise_sigma is None else noise_sigma
    kind = spec.noise if noise is None else noise
    clean = synthesize_dwi(phantom.field, scheme, t1=phantom.t1, mask=phantom.mask)
    rng = np.random.default_rng(spec.seed + 7919 if seed is None else seed)
    return noisy_stack(clean, sigma, n_b0, rng, kind)


def stripe_modulation(volume: Volume, phantom: Phantom) -> float:
    """Amplitude of the stripe pattern inside the striated slab: the absolute
    difference between mean intensity on gray-bridge and white stripes."""
    labels = phantom.labels.data
    slab = phantom.striated.data > 0
    gray = slab & (labels == DEEP_GRAY)
    white = slab & (labels == WHITE)
    if not gray.any() or not white.any():
        raise ValueError("phantom has no striated region")
    return float(abs(volume.data[gray].mean() - volume.data[white].mean()))
