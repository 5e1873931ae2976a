"""Image similarity and DTI-metric errors, aggregated into a Table-1-style report."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .tensor import DtiMaps, dti_maps, fit_tensor
from .volume import DwiStack, Volume

METHODS = ("trilinear", "cubic", "srdti")
METHOD_LABELS = {"trilinear": "Trilinear", "cubic": "Cubic spline", "srdti": "SRDTI"}
IMAGE_CHANNELS = ("b0",) + tuple(f"dwi{i}" for i in range(1, 7))
CHANNEL_LABELS = ("b=0 image",) + tuple(f"DWI (dir.{i})" for i in range(1, 7))
DTI_METRICS = ("v1", "fa", "md", "ad", "rd")
DTI_LABELS = ("Primary eigenvector (deg)", "Fractional anisotropy", "Mean diffusivity (um2/ms)",
              "Axial diffusivity (um2/ms)", "Radial diffusivity (um2/ms)")


class EmptyMaskError(ValueError):
    pass


ArrayLike = Union[Volume, np.ndarray]


def _arr(x: ArrayLike) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Volume) else x, dtype=np.float64)


def _mask(mask, shape) -> np.ndarray:
    if mask is None:
        m = np.ones(shape, dtype=bool)
    else:
        m = _arr(mask) > 0
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} does not match image shape {shape}")
    if not m.any():
        raise EmptyMaskError("mask selects no voxels")
    return m


def _pair(a, b):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mae(a: ArrayLike, b: ArrayLike, mask=None) -> float:
    a, b = _pair(a, b)
    m = _mask(mask, a.shape)
    return float(np.mean(np.abs(a[m] - b[m])))


def psnr(a: ArrayLike, b: ArrayLike, mask=None, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; +inf when the images agree exactly."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    a, b = _pair(a, b)
    m = _mask(mask, a.shape)
    mse = float(np.mean((a[m] - b[m]) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _box_sum(x: np.ndarray, radius: int) -> np.ndarray:
    """Sum over a (2r+1)^3 window clipped at the borders (cumulative sums)."""
    out = x
    for axis in range(x.ndim):
        n = out.shape[axis]
        c = np.cumsum(out, axis=axis)
        zero = np.zeros_like(np.take(c, [0], axis=axis))
        c = np.concatenate([zero, c], axis=axis)
        hi = np.minimum(np.arange(n) + radius + 1, n)
        lo = np.maximum(np.arange(n) - radius, 0)
        out = np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis)
    return out


def ssim_map(a: ArrayLike, b: ArrayLike, window: int = 7, K1: float = 0.01, K2: float = 0.03,
             L: float = 1.0) -> np.ndarray:
    """Local SSIM with a uniform cubic window (population statistics)."""
    if window % 2 != 1 or window < 1:
        raise ValueError("SSIM window must be a positive odd integer")
    a, b = _pair(a, b)
    r = window // 2
    count = _box_sum(np.ones_like(a), r)
    mu_a = _box_sum(a, r) / count
    mu_b = _box_sum(b, r) / count
    var_a = _box_sum(a * a, r) / count - mu_a * mu_a
    var_b = _box_sum(b * b, r) / count - mu_b * mu_b
    cov = _box_sum(a * b, r) / count - mu_a * mu_b
    c1 = (K1 * L) ** 2
    c2 = (K2 * L) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: ArrayLike, b: ArrayLike, mask=None, window: int = 7, K1: float = 0.01, K2: float = 0.03,
         L: float = 1.0) -> float:
    smap = ssim_map(a, b, window, K1, K2, L)
    m = _mask(mask, smap.shape)
    return float(np.mean(smap[m]))


def angular_error_v1(v1a: np.ndarray, v1b: np.ndarray, mask=None, tol: float = 1e-3):
    """Sign-invariant angle (degrees) between principal eigenvectors.

    Returns ``(map, mean)``; the map is zero outside the mask.
    """
    va = np.asarray(v1a, dtype=np.float64)
    vb = np.asarray(v1b, dtype=np.float64)
    if va.shape != vb.shape or va.shape[-1] != 3:
        raise ValueError(f"vector fields must share shape (..., 3), got {va.shape} and {vb.shape}")
    m = _mask(mask, va.shape[:-1])
    for name, v in (("first", va), ("second", vb)):
        norms = np.linalg.norm(v[m], axis=-1)
        if np.any(np.abs(norms - 1) > tol):
            raise ValueError(f"{name} field has non-unit vectors inside the mask")
    # atan2 form of arccos(|a.b|): same angle, but exact for (anti)parallel vectors
    dot = np.abs(np.sum(va * vb, axis=-1))
    cross = np.linalg.norm(np.cross(va, vb), axis=-1)
    angles = np.degrees(np.arctan2(cross, dot))
    angles = np.where(m, angles, 0.0)
    return angles, float(np.mean(angles[m]))


# --- report -----------------------------------------------------------------

def _image_channels(stack: DwiStack) -> List[Volume]:
    return [stack.b0] + list(stack.dwis)


def dti_errors(gt_maps: DtiMaps, maps: DtiMaps, mask: np.ndarray, v1_mask: np.ndarray) -> Dict[str, float]:
    out = {"v1": angular_error_v1(gt_maps.v1, maps.v1, v1_mask)[1]}
    for name in ("fa", "md", "ad", "rd"):
        out[name] = mae(getattr(gt_maps, name), getattr(maps, name), mask)
    return out


def evaluate_subject(gt: DwiStack, candidates: Mapping[str, DwiStack], mask=None,
                     v1_fa_threshold: float = 0.1, gt_maps: Optional[DtiMaps] = None) -> Dict[str, dict]:
    """All Table-1 cells for one subject: {method: {"image": ..., "dti": ...}}."""
    m = _mask(mask if mask is not None else gt.mask, gt.b0.dims)
    mvol = gt.b0.with_data(m.astype(np.float64))
    if gt_maps is None:
        gt_maps = dti_maps(fit_tensor(gt, mvol), m)
    v1_mask = m & (gt_maps.fa >= v1_fa_threshold)
    out = {}
    for method, stack in candidates.items():
        image = {}
        for name, ref, cand in zip(IMAGE_CHANNELS, _image_channels(gt), _image_channels(stack)):
            image[name] = {"mae": mae(ref, cand, m), "psnr": psnr(ref, cand, m), "ssim": ssim(ref, cand, m)}
        maps = dti_maps(fit_tensor(stack, mvol), m)
        out[method] = {"image": image, "dti": dti_errors(gt_maps, maps, m, v1_mask)}
    return out


def _stat(values: Sequence[float]) -> List[float]:
    vals = np.asarray(values, dtype=np.float64)
    if np.all(np.isinf(vals)):
        return [math.inf, 0.0]
    return [float(np.mean(vals)), float(np.std(vals))]


@dataclass
class EvalReport:
    """Mean and std over subjects of every cell; ``None`` marks an absent method."""

    methods: Dict[str, Optional[dict]]
    subjects: int
    mask: str = "phantom brain mask"
    v1_fa_threshold: float = 0.1
    extra: Dict[str, object] = field(default_factory=dict)

    def cell(self, method: str, kind: str, key: str, metric: Optional[str] = None) -> float:
        entry = self.methods[method]
        if entry is None:
            raise KeyError(f"method {method!r} is absent from the report")
        if kind == "image":
            return entry["image"][key][metric][0]
        return entry["dti"][key][0]

    def to_json(self) -> str:
        def enc(x):
            if isinstance(x, float) and math.isinf(x):
                return "inf"
            if isinstance(x, dict):
                return {k: enc(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [enc(v) for v in x]
            return x
        payload = {
            "subjects": self.subjects,
            "mask": self.mask,
            "v1_fa_threshold": self.v1_fa_threshold,
            "image_channels": list(IMAGE_CHANNELS),
            "dti_metrics": list(DTI_METRICS),
            "methods": enc(self.methods),
        }
        payload.update(enc(self.extra))
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        raw = json.loads(text)

        def dec(x):
            if x == "inf":
                return math.inf
            if isinstance(x, dict):
                return {k: dec(v) for k, v in x.items()}
            if isinstance(x, list):
                return [dec(v) for v in x]
            return x
        return cls(dec(raw["methods"]), raw["subjects"], raw.get("mask", ""), raw.get("v1_fa_threshold", 0.1))

    def to_text(self) -> str:
        def fmt(stat, digits):
            mean, std = stat
            if math.isinf(mean):
                return "inf"
            return f"{mean:.{digits}f}±{std:.{digits + 1}f}"

        lines = []
        sections = [("a", "Mean absolute error of images", "mae", 4),
                    ("b", "Peak signal-to-noise ratio of images (dB)", "psnr", 2),
                    ("c", "Structural similarity index of images", "ssim", 4)]
        width = 16
        for letter, title, metric, digits in sections:
            lines += [letter, title, "".ljust(14) + "".join(c.ljust(width) for c in CHANNEL_LABELS)]
            for method, entry in self.methods.items():
                label = METHOD_LABELS.get(method, method).ljust(14)
                if entry is None:
                    lines.append(label + "absent")
                    continue
                lines.append(label + "".join(fmt(entry["image"][c][metric], digits).ljust(width)
                                             for c in IMAGE_CHANNELS))
            lines.append("")
        lines += ["d", "Mean absolute error of DTI metrics",
                  "".ljust(14) + "".join(c.ljust(28) for c in DTI_LABELS)]
        for method, entry in self.methods.items():
            label = METHOD_LABELS.get(method, method).ljust(14)
            if entry is None:
                lines.append(label + "absent")
                continue
            lines.append(label + "".join(fmt(entry["dti"][k], 2 if k == "v1" else 4).ljust(28)
                                         for k in DTI_METRICS))
        lines += ["", f"subjects: {self.subjects}; mask: {self.mask}; "
                      f"V1 error restricted to ground-truth FA >= {self.v1_fa_threshold:g}"]
        return "\n".join(lines) + "\n"


def evaluate_report(ground_truth: Union[DwiStack, Sequence[DwiStack]],
                    candidates: Mapping[str, Union[DwiStack, Sequence[DwiStack]]],
                    masks=None, v1_fa_threshold: float = 0.1,
                    required: Sequence[str] = METHODS) -> EvalReport:
    """Aggregate per-subject cells over subjects into an :class:`EvalReport`.

    Methods listed in ``required`` but missing from ``candidates`` appear as
    explicit ``None`` entries.
    """
    gts = [ground_truth] if isinstance(ground_truth, DwiStack) else list(ground_truth)
    cands = {k: ([v] if isinstance(v, DwiStack) else list(v)) for k, v in candidates.items()}
    for k, v in cands.items():
        if len(v) != len(gts):
            raise ValueError(f"method {k!r} has {len(v)} subjects, ground truth has {len(gts)}")
    if masks is None:
        masks = [None] * len(gts)
    per_subject = []
    for i, gt in enumerate(gts):
        per_subject.append(evaluate_subject(gt, {k: v[i] for k, v in cands.items()}, masks[i], v1_fa_threshold))

    methods: Dict[str, Optional[dict]] = {}
    order = list(required) + [k for k in cands if k not in required]
    for method in order:
        if method not in cands:
            methods[method] = None
            continue
        subj = [s[method] for s in per_subject]
        image = {c: {metric: _stat([s["image"][c][metric] for s in subj]) for metric in ("mae", "psnr", "ssim")}
                 for c in IMAGE_CHANNELS}
        dti = {k: _stat([s["dti"][k] for s in subj]) for k in DTI_METRICS}
        methods[method] = {"image": image, "dti": dti}
    return EvalReport(methods, len(gts), v1_fa_threshold=v1_fa_threshold)
