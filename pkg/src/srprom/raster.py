"""Deterministic low-level raster primitives.

Border policy: morphology treats out-of-bounds as background; blur, windowed
variance, and the SSIM windows reflect at the borders (ping-pong, no edge
repeat). Bicubic resizing uses the Catmull-Rom kernel (a = -0.5) with edge
clamping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import (
    BinaryMask,
    Heatmap,
    ImageBuffer,
    StructuringElement,
    ValidationError,
)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

MORPH_OPS = ("erode", "dilate", "open", "close")


@dataclass(frozen=True)
class ComponentLabeling:
    """Connected-component labels: 0 = background, 1..component_count in
    row-major first-pixel order."""

    labels: np.ndarray
    component_count: int


@dataclass(frozen=True)
class Rect:
    """Inclusive pixel rectangle (x0, y0)-(x1, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValidationError(f"degenerate rectangle {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1 + 1), slice(self.x0, self.x1 + 1)


# ---------------------------------------------------------------------------
# Grayscale and resizing


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """Luma conversion with 0.299/0.587/0.114 weights; 1-channel passthrough."""
    if img.channels == 1:
        return img
    gray = (
        LUMA_WEIGHTS[0] * img.data[:, :, 0]
        + LUMA_WEIGHTS[1] * img.data[:, :, 1]
        + LUMA_WEIGHTS[2] * img.data[:, :, 2]
    )
    return ImageBuffer(data=np.clip(gray, 0.0, 1.0)[:, :, None])


def _nearest_indices(out_n: int, in_n: int) -> np.ndarray:
    scale = in_n / out_n
    idx = np.floor((np.arange(out_n) + 0.5) * scale).astype(np.int64)
    return np.clip(idx, 0, in_n - 1)


def catmull_rom(t: float | np.ndarray) -> float | np.ndarray:
    """Cubic convolution kernel with a = -0.5."""
    at = np.abs(t)
    near = (1.5 * at - 2.5) * at * at + 1.0
    far = ((-0.5 * at + 2.5) * at - 4.0) * at + 2.0
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _resize_axis_bicubic(arr: np.ndarray, out_n: int, axis: int) -> np.ndarray:
    in_n = arr.shape[axis]
    src = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    out = np.zeros(arr.shape[:axis] + (out_n,) + arr.shape[axis + 1 :], dtype=np.float64)
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, in_n - 1)
        weights = np.asarray(catmull_rom(frac - tap), dtype=np.float64)
        shape = [1] * arr.ndim
        shape[axis] = out_n
        out += np.take(arr, idx, axis=axis) * weights.reshape(shape)
    return out


def resize(img: ImageBuffer, width: int, height: int, mode: str = "bicubic") -> ImageBuffer:
    """Resize to width x height with nearest-neighbor or Catmull-Rom bicubic."""
    if width < 1 or height < 1:
        raise ValidationError(f"target size {width}x{height} must be at least 1x1")
    if mode == "nearest":
        iy = _nearest_indices(height, img.height)
        ix = _nearest_indices(width, img.width)
        data = img.data[np.ix_(iy, ix)]
    elif mode == "bicubic":
        data = _resize_axis_bicubic(img.data, height, axis=0)
        data = _resize_axis_bicubic(data, width, axis=1)
        data = np.clip(data, 0.0, 1.0)
    else:
        raise ValidationError(f"unknown resize mode {mode!r}")
    return ImageBuffer(data=data)


# ---------------------------------------------------------------------------
# Reflection padding and separable filters


def reflect_indices(n: int, pad: int) -> np.ndarray:
    """Sample indices for ping-pong reflection (no edge repeat) of length n."""
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _pad_reflect(arr: np.ndarray, pad: int) -> np.ndarray:
    iy = reflect_indices(arr.shape[0], pad)
    ix = reflect_indices(arr.shape[1], pad)
    return np.ascontiguousarray(arr[np.ix_(iy, ix)])


def _sep_filter(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Apply a symmetric 1-D kernel along both axes with reflected borders."""
    radius = (kernel.size - 1) // 2
    return _kernels.convolve_sep_valid(_pad_reflect(arr, radius), kernel)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian sampled on [-ceil(3*sigma), ceil(3*sigma)]."""
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    return kernel / kernel.sum()


def _blur_array(arr: np.ndarray, sigma: float) -> np.ndarray:
    return _sep_filter(arr, gaussian_kernel(sigma))


def gaussian_blur(field: Heatmap | ImageBuffer, sigma: float) -> Heatmap | ImageBuffer:
    """Separable Gaussian blur; kernel radius ceil(3*sigma), reflected borders."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    if isinstance(field, Heatmap):
        return Heatmap(values=_blur_array(field.values, sigma), polarity=field.polarity)
    channels = [_blur_array(field.data[:, :, c], sigma) for c in range(field.channels)]
    return ImageBuffer(data=np.clip(np.stack(channels, axis=2), 0.0, 1.0))


def _local_variance_array(arr: np.ndarray, n: int) -> np.ndarray:
    box = np.ones(n, dtype=np.float64)
    count = float(n * n)
    s1 = _sep_filter(arr, box)
    s2 = _sep_filter(arr * arr, box)
    mean = s1 / count
    return np.maximum(s2 / count - mean * mean, 0.0)


def local_variance(field: Heatmap, n: int) -> Heatmap:
    """Per-pixel population variance of the n x n neighborhood (n odd >= 3)."""
    if n < 3 or n % 2 == 0:
        raise ValidationError(f"window side must be odd and >= 3, got {n}")
    return Heatmap(values=_local_variance_array(field.values, n), polarity=field.polarity)


# ---------------------------------------------------------------------------
# Morphology, labeling, bounding boxes


def _check_se_fits(mask: BinaryMask, se: StructuringElement) -> None:
    if se.size > min(mask.width, mask.height):
        raise ValidationError(
            f"structuring element size {se.size} exceeds mask extent "
            f"{mask.width}x{mask.height}"
        )


def morphology(mask: BinaryMask, op: str, se: StructuringElement) -> BinaryMask:
    """Set-theoretic erode/dilate/open/close with out-of-bounds as background."""
    if op not in MORPH_OPS:
        raise ValidationError(f"unknown morphology op {op!r}")
    _check_se_fits(mask, se)
    dy = np.ascontiguousarray(se.offsets[:, 0])
    dx = np.ascontiguousarray(se.offsets[:, 1])
    bits = mask.bits
    if op == "erode":
        bits = _kernels.binary_erode(bits, dy, dx)
    elif op == "dilate":
        bits = _kernels.binary_dilate(bits, dy, dx)
    elif op == "open":
        bits = _kernels.binary_dilate(_kernels.binary_erode(bits, dy, dx), dy, dx)
    else:  # close
        bits = _kernels.binary_erode(_kernels.binary_dilate(bits, dy, dx), dy, dx)
    return BinaryMask(bits=bits, display_dilated=mask.display_dilated)


def connected_components(mask: BinaryMask) -> ComponentLabeling:
    labels, count = _kernels.label_components(mask.bits)
    return ComponentLabeling(labels=labels, component_count=count)


def padded_bbox(mask: BinaryMask, pad: int, bounds: tuple[int, int] | None = None) -> Rect:
    """Tight bounding box of true pixels grown by ``pad``, clamped to bounds.

    ``bounds`` is (width, height) and defaults to the mask extent.
    """
    if pad < 0:
        raise ValidationError("pad must be non-negative")
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    if rows.size == 0:
        raise ValidationError("cannot take the bounding box of an empty mask")
    width, height = bounds if bounds is not None else (mask.width, mask.height)
    return Rect(
        x0=max(0, int(cols[0]) - pad),
        y0=max(0, int(rows[0]) - pad),
        x1=min(width - 1, int(cols[-1]) + pad),
        y1=min(height - 1, int(rows[-1]) + pad),
    )
