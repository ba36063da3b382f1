"""Toolkit for measuring how noticeable super-resolution artifacts are.

The package turns SR outputs and reference images into artifact heatmaps,
proposes candidate masks, aggregates crowd votes into prominence values,
scores detectors with a threshold-free contrast protocol, and trains a small
per-pixel MLP fusion baseline.
"""

__version__ = "0.1.0"

from .model import (
    ArtifactRecord,
    BinaryMask,
    FormatError,
    Heatmap,
    ImageBuffer,
    StructuringElement,
    ValidationError,
)

__all__ = [
    "ArtifactRecord",
    "BinaryMask",
    "FormatError",
    "Heatmap",
    "ImageBuffer",
    "StructuringElement",
    "ValidationError",
    "__version__",
]
