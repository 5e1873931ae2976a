"""Adam updates and the block-wise training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .model import CnnConfig, CnnModel, model_backward, model_init

log = logging.getLogger(__name__)


@dataclass
class TrainState:
    """Adam moments (shaped like the parameters), step counter and loss history."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    history: List[float] = field(default_factory=list)

    @classmethod
    def for_model(cls, model: CnnModel) -> "TrainState":
        params = model.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(model: CnnModel, state: TrainState, grads: CnnModel, lr: Optional[float] = None,
              beta1: Optional[float] = None, beta2: Optional[float] = None,
              epsilon: Optional[float] = None) -> None:
    """One bias-corrected Adam update, in place on ``model`` and ``state``."""
    cfg = model.config
    lr = cfg.learning_rate if lr is None else lr
    b1 = cfg.beta1 if beta1 is None else beta1
    b2 = cfg.beta2 if beta2 is None else beta2
    eps = cfg.epsilon if epsilon is None else epsilon
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(model.parameters(), grads.parameters(), state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


def _accumulate(total: Optional[CnnModel], grads: CnnModel) -> CnnModel:
    if total is None:
        return grads
    for t, g in zip(total.parameters(), grads.parameters()):
        t += g
    return total


def train(config: CnnConfig, inputs: np.ndarray, targets: np.ndarray,
          model: Optional[CnnModel] = None,
          checkpoint: Optional[Callable[[int, CnnModel, TrainState], None]] = None,
          dtype=np.float32) -> Tuple[CnnModel, TrainState]:
    """Train on paired blocks.

    ``inputs`` is (N, 8, bx, by, bz) and ``targets`` (N, 7, bx, by, bz).
    Mini-batches are drawn from a seeded permutation that is redrawn every
    epoch; one loss value (batch mean) is recorded per iteration.
    """
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if len(inputs) == 0:
        raise ValueError("training dataset is empty")
    if len(inputs) != len(targets):
        raise ValueError(f"{len(inputs)} input blocks but {len(targets)} target blocks")
    if model is None:
        model = model_init(config, config.seed, dtype)
    state = TrainState.for_model(model)
    rng = np.random.default_rng(config.seed + 1)
    order = rng.permutation(len(inputs))
    cursor = 0
    for it in range(config.iterations):
        total, losses = None, []
        for _ in range(config.batch_size):
            if cursor == len(order):
                order, cursor = rng.permutation(len(inputs)), 0
            idx = order[cursor]
            cursor += 1
            grads, loss = model_backward(model, inputs[idx], targets[idx])
            total = _accumulate(total, grads)
            losses.append(loss)
        if config.batch_size > 1:
            for g in total.parameters():
                g /= config.batch_size
        adam_step(model, state, total)
        state.history.append(float(np.mean(losses)))
        if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            log.info("iteration %d loss %.6g", it + 1, state.history[-1])
            if checkpoint is not None:
                checkpoint(it + 1, model, state)
    return model, state
