"""Plain residual 3D CNN: stacked 3x3x3 convolutions with ReLU, a global skip
from the seven diffusion input channels to the output, and its gradients."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class CnnConfig:
    layers: int = 10
    kernels: int = 192
    kernel_size: int = 3
    in_channels: int = 8
    out_channels: int = 7
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 1
    iterations: int = 1000
    checkpoint_every: int = 0
    block: Tuple[int, int, int] = (64, 64, 64)
    overlap: Tuple[int, int, int] = (0, 0, 0)
    seed: int = 0

    def __post_init__(self):
        if self.layers < 2:
            raise ValueError("need at least 2 convolution layers")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.in_channels != self.out_channels + 1:
            raise ValueError("in_channels must equal out_channels + 1 (T1 is input-only)")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        object.__setattr__(self, "block", tuple(int(b) for b in self.block))
        object.__setattr__(self, "overlap", tuple(int(v) for v in self.overlap))

    def layer_shapes(self) -> List[Tuple[int, int, int, int, int]]:
        d = self.kernel_size
        chans = [self.in_channels] + [self.kernels] * (self.layers - 1) + [self.out_channels]
        return [(chans[i + 1], chans[i], d, d, d) for i in range(self.layers)]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["block"] = list(self.block)
        out["overlap"] = list(self.overlap)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CnnConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown CNN config keys: {sorted(unknown)}")
        return cls(**data)


PAPER_CONFIG = CnnConfig(layers=10, kernels=192, block=(64, 64, 64))
# small enough for one CPU core: 3000 iterations on 24^3 blocks take about 11 minutes
DESK_CONFIG = CnnConfig(layers=6, kernels=16, block=(24, 24, 24), overlap=(8, 8, 8),
                        learning_rate=1e-3, iterations=3000, checkpoint_every=500)


@dataclass
class CnnModel:
    config: CnnConfig
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def parameters(self) -> List[np.ndarray]:
        """Weights and biases interleaved per layer (the serialization order)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def parameter_names(self) -> List[str]:
        names = []
        for i in range(len(self.weights)):
            names += [f"layer{i + 1}.weight", f"layer{i + 1}.bias"]
        return names

    def copy(self) -> "CnnModel":
        return CnnModel(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "CnnModel":
        return CnnModel(self.config, [w.astype(dtype) for w in self.weights],
                        [b.astype(dtype) for b in self.biases])

    def zeros_like(self) -> "CnnModel":
        return CnnModel(self.config, [np.zeros_like(w) for w in self.weights],
                        [np.zeros_like(b) for b in self.biases])

    def forward(self, x: np.ndarray) -> np.ndarray:
        return model_forward(self, x)


def model_init(config: CnnConfig, seed: Optional[int] = None, dtype=np.float32) -> CnnModel:
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    weights, biases = [], []
    for shape in config.layer_shapes():
        fan_in = shape[1] * shape[2] * shape[3] * shape[4]
        weights.append((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype))
        biases.append(np.zeros(shape[0], dtype=dtype))
    return CnnModel(config, weights, biases)


def zero_model(config: CnnConfig, dtype=np.float32) -> CnnModel:
    return model_init(config, 0, dtype).zeros_like()


# --- convolution ------------------------------------------------------------

def _im2col(x: np.ndarray, d: int) -> np.ndarray:
    """(C, X, Y, Z) -> (C * d^3, X * Y * Z) neighbourhood matrix, zero-padded."""
    p = d // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))
    win = sliding_window_view(xp, (d, d, d), axis=(1, 2, 3))      # (C, X, Y, Z, d, d, d)
    c = x.shape[0]
    return win.transpose(0, 4, 5, 6, 1, 2, 3).reshape(c * d ** 3, -1)


def conv3d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-size 3D cross-correlation (stride 1, zero padding) plus bias."""
    if x.ndim != 4 or weight.ndim != 5:
        raise ValueError(f"expected (C, X, Y, Z) input and 5D weights, got {x.shape} and {weight.shape}")
    if weight.shape[1] != x.shape[0]:
        raise ValueError(f"weights expect {weight.shape[1]} input channels, input has {x.shape[0]}")
    out, _ = _conv_with_cols(x, weight, bias)
    return out


def _conv_with_cols(x, weight, bias):
    cout, _, d = weight.shape[0], weight.shape[1], weight.shape[2]
    cols = _im2col(x, d)
    out = weight.reshape(cout, -1) @ cols
    out += bias[:, None]
    return out.reshape((cout,) + x.shape[1:]), cols


def _conv_input_grad(gout: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the conv input: correlation of the output gradient with
    the spatially flipped, channel-transposed kernel."""
    flipped = np.ascontiguousarray(weight[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    cin, d = flipped.shape[0], flipped.shape[2]
    cols = _im2col(gout, d)
    return (flipped.reshape(cin, -1) @ cols).reshape((cin,) + gout.shape[1:])


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


# --- network ----------------------------------------------------------------

def _check_input(model: CnnModel, x: np.ndarray) -> np.ndarray:
    if x.ndim != 4 or x.shape[0] != model.config.in_channels:
        raise ValueError(f"expected ({model.config.in_channels}, X, Y, Z) input, got {x.shape}")
    return np.asarray(x, dtype=model.dtype)


def _forward_cached(model: CnnModel, x: np.ndarray):
    acts, cols = [], []
    a = x
    n = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z, c = _conv_with_cols(a, w, b)
        cols.append(c)
        a = relu(z) if i < n - 1 else z
        acts.append(a)
    out = x[: model.config.out_channels] + acts[-1]
    return out, acts, cols


def model_forward(model: CnnModel, x: np.ndarray, return_hidden: bool = False):
    """Residual prediction: diffusion input channels plus the conv stack output.

    Input channel order is (b0, dwi1..dwi6, t1); the T1 channel feeds the
    convolutions only.
    """
    x = _check_input(model, x)
    out, acts, _ = _forward_cached(model, x)
    if return_hidden:
        return out, acts[:-1]
    return out


def mse_loss(output: np.ndarray, target: np.ndarray) -> float:
    diff = output.astype(np.float64) - target
    return float(np.mean(diff * diff))


def model_backward(model: CnnModel, x: np.ndarray, target: np.ndarray):
    """Mean-squared loss and its gradients for every weight and bias.

    Returns ``(grads, loss)`` where ``grads`` is a :class:`CnnModel` holding
    gradients in place of parameters.
    """
    x = _check_input(model, x)
    target = np.asarray(target, dtype=model.dtype)
    out, acts, cols = _forward_cached(model, x)
    if target.shape != out.shape:
        raise ValueError(f"target shape {target.shape} does not match output {out.shape}")
    diff = out - target
    loss = mse_loss(out, target)
    g = (2.0 / diff.size) * diff                     # d loss / d output == d loss / d residual
    n = len(model.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        w = model.weights[i]
        g2 = g.reshape(g.shape[0], -1)
        gw[i] = (g2 @ cols[i].T).reshape(w.shape)
        gb[i] = g2.sum(axis=1)
        if i == 0:
            break
        g = _conv_input_grad(g, w)
        g = g * (acts[i - 1] > 0)                    # ReLU subgradient is 0 at 0
    return CnnModel(model.config, gw, gb), loss
