"""Cloth-invariant person re-identification toolkit built around
semantic-guided pixel sampling: clothes and pants pixels are swapped across
a mini-batch using human-parsing masks, and a consistency loss ties each
sample's embedding to its clothes-swapped twin.
"""

from .core import Batch, Image, RngStream, SemanticMask
from .sampling import PixelBank, SamplingConfig, generate

__all__ = [
    "Batch",
    "Image",
    "PixelBank",
    "RngStream",
    "SamplingConfig",
    "SemanticMask",
    "generate",
]
