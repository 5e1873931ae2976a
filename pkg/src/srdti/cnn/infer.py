"""Tiled full-volume inference."""
from __future__ import annotations

import numpy as np

from ..tiling import assemble_blocks, extract_blocks
from ..volume import BlockSpec, DwiStack
from .model import CnnModel, model_forward


class MissingChannelError(ValueError):
    pass


def stack_to_input(stack: DwiStack, dtype=np.float32) -> np.ndarray:
    """(8, X, Y, Z) network input in channel order b0, dwi1..dwi6, t1."""
    if stack.t1 is None:
        raise MissingChannelError("the network input needs a T1 volume (8 channels); stack has none")
    if len(stack.dwis) != 6:
        raise MissingChannelError(f"expected 6 DWIs along the encoding scheme, got {len(stack.dwis)}")
    return np.stack([stack.b0.data] + [d.data for d in stack.dwis] + [stack.t1.data]).astype(dtype)


def stack_to_target(stack: DwiStack, dtype=np.float32) -> np.ndarray:
    return np.stack([stack.b0.data] + [d.data for d in stack.dwis]).astype(dtype)


def predict_volume(model: CnnModel, stack: DwiStack, spec: BlockSpec) -> DwiStack:
    """Run the network block by block and blend overlaps by uniform averaging."""
    x = stack_to_input(stack, model.dtype)
    blocks, layout = extract_blocks(x, spec)
    out = np.stack([model_forward(model, b) for b in blocks])
    volume = assemble_blocks(out, layout)
    return DwiStack.from_arrays(volume, stack.table, stack.b0, mask=stack.mask)
