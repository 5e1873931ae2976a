"""Super-resolution diffusion tensor imaging on synthetic phantoms.

Image-space 3D CNN that restores high-resolution DWIs from upsampled
low-resolution inputs, together with the volume I/O, resamplers, tensor
model, metrics and phantom generator it is trained and evaluated with.
"""
__version__ = "0.1.0"

from .volume import CHANNEL_ORDER, BlockSpec, DwiStack, GeometryError, GradientTable, Grid, Volume

__all__ = ["CHANNEL_ORDER", "BlockSpec", "DwiStack", "GeometryError", "GradientTable", "Grid", "Volume",
           "__version__"]
