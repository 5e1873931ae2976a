"""Central-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .model import CnnConfig, _forward_cached, model_backward, model_init, mse_loss

SMALL_CASE = CnnConfig(layers=3, kernels=4, block=(8, 8, 8), iterations=0)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    samples: int
    # samples redrawn because the +-step straddled a ReLU kink
    kinks_skipped: int = 0
    # per parameter tensor: (flat index, relative error) of the worst sample
    worst: Dict[str, tuple] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def lines(self) -> List[str]:
        out = [f"{name}: worst index {idx} rel err {err:.3e}" for name, (idx, err) in self.worst.items()]
        out.append(f"max relative error {self.max_rel_error:.3e} over {self.samples} parameters, "
                   f"{self.kinks_skipped} kink crossing(s) redrawn "
                   f"({'PASS' if self.passed else 'FAIL'} < {self.tolerance:g})")
        return out


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _loss_and_pattern(model, x, target):
    out, acts, _ = _forward_cached(model, x)
    return mse_loss(out, target), [a > 0 for a in acts[:-1]]


def gradient_check(config: Optional[CnnConfig] = None, seed: int = 0, samples: int = 50,
                   step: float = 1e-4, tolerance: float = 1e-4) -> GradCheckReport:
    """Compare backprop gradients with central differences on a random float64 case.

    Biases are randomized so bias gradients see non-trivial activation
    patterns. A sampled parameter whose +-step flips any ReLU is not
    differentiable across the stencil; it is replaced by a fresh draw.
    """
    config = config or SMALL_CASE
    rng = np.random.default_rng(seed)
    model = model_init(config, seed, dtype=np.float64)
    for b in model.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    shape = config.block
    x = rng.standard_normal((config.in_channels,) + shape)
    target = rng.standard_normal((config.out_channels,) + shape)
    grads, _ = model_backward(model, x, target)
    _, base_pattern = _loss_and_pattern(model, x, target)

    params = model.parameters()
    gparams = grads.parameters()
    names = model.parameter_names()
    sizes = np.array([p.size for p in params])
    bounds = np.cumsum(sizes)
    candidates = rng.permutation(int(sizes.sum()))
    report = GradCheckReport(0.0, tolerance, 0)
    for flat in candidates:
        if report.samples == samples:
            break
        t = int(np.searchsorted(bounds, flat, side="right"))
        idx = int(flat - (bounds[t - 1] if t else 0))
        p = params[t].reshape(-1)
        orig = p[idx]
        p[idx] = orig + step
        up, pat_up = _loss_and_pattern(model, x, target)
        p[idx] = orig - step
        down, pat_down = _loss_and_pattern(model, x, target)
        p[idx] = orig
        if any(np.any(a != b) or np.any(c != b) for a, c, b in zip(pat_up, pat_down, base_pattern)):
            report.kinks_skipped += 1
            continue
        numeric = (up - down) / (2 * step)
        err = relative_error(float(gparams[t].reshape(-1)[idx]), numeric)
        if names[t] not in report.worst or err > report.worst[names[t]][1]:
            report.worst[names[t]] = (idx, err)
        report.max_rel_error = max(report.max_rel_error, err)
        report.samples += 1
    return report
