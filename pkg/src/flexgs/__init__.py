"""Adaptive compression of 3D Gaussian Splatting models.

Importance-driven pruning and grouped INT4/INT8 quantization of Gaussian
splat models, plus a search that picks the combined plan meeting a quality or
size target. Quality is judged with the bundled CPU rasterizer.
"""

from .foa import Constraint, compress
from .model import GaussianModel
from .plans import CompressionPlan, PruningPlan, QuantizationPlan
from .ply_io import load_model, load_ply, read_fgc, write_fgc, write_ply
from .renderer import Camera, load_cameras, render

__all__ = [
    "Camera",
    "CompressionPlan",
    "Constraint",
    "GaussianModel",
    "PruningPlan",
    "QuantizationPlan",
    "compress",
    "load_cameras",
    "load_model",
    "load_ply",
    "read_fgc",
    "render",
    "write_fgc",
    "write_ply",
]
