"""Candidate-mask pipeline: thresholding, ranking, viewer prep, rendering.

Viewer preparation is open(square 25) -> dilate(disk 64) -> close(square 25);
scoring later undoes only the dilation by eroding with the same disk.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import (
    SIMILARITY_HIGH,
    BinaryMask,
    Heatmap,
    ImageBuffer,
    StructuringElement,
    ValidationError,
)
from .providers import ProviderSpec
from .raster import Rect, connected_components, morphology, padded_bbox, resize

VIEW_OPEN_SE = StructuringElement.square(25)
VIEW_DILATE_SE = StructuringElement.disk(64)
VIEW_CLOSE_SE = StructuringElement.square(25)

MIN_CANDIDATE_AREA = 16
DEFAULT_CANDIDATES = 10

HIGHLIGHT_LIGHTEN = 0.5
BOX_WIDTH = 3
BOX_COLOR = (1.0, 0.0, 0.0)


class NoDisplayableArtifact(ValidationError):
    """Viewer preparation removed every pixel (input was only specks)."""


def threshold_heatmap(heatmap: Heatmap, spec: ProviderSpec) -> BinaryMask:
    """Strict comparison against the provider's native threshold."""
    if spec.comparator == "above":
        bits = heatmap.values > spec.native_threshold
    else:
        bits = heatmap.values < spec.native_threshold
    return BinaryMask(bits=bits)


@dataclass(frozen=True)
class Candidate:
    mask: BinaryMask
    mean_score: float
    area: int


def extract_candidates(
    mask: BinaryMask,
    heatmap: Heatmap,
    k: int = DEFAULT_CANDIDATES,
    min_area: int = MIN_CANDIDATE_AREA,
) -> list[Candidate]:
    """Top-k connected components ranked by mean heatmap value inside.

    Similarity-high maps are negated first so "strongest" means most
    distorted for every provider. Components below ``min_area`` pixels are
    dropped; ties break by row-major first-pixel order.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if (mask.height, mask.width) != (heatmap.height, heatmap.width):
        raise ValidationError(
            f"mask {mask.width}x{mask.height} does not match heatmap "
            f"{heatmap.width}x{heatmap.height}"
        )
    values = heatmap.values
    if heatmap.polarity == SIMILARITY_HIGH:
        values = -values
    labeling = connected_components(mask)
    candidates = []
    for label in range(1, labeling.component_count + 1):
        bits = labeling.labels == label
        area = int(bits.sum())
        if area < min_area:
            continue
        candidates.append(
            Candidate(
                mask=BinaryMask(bits=bits),
                mean_score=float(values[bits].mean()),
                area=area,
            )
        )
    # label order is already row-major first-pixel order, so a stable sort
    # on score alone implements the tie rule
    candidates.sort(key=lambda c: -c.mean_score)
    return candidates[:k]


def prep_view(mask: BinaryMask) -> BinaryMask:
    """Open, dilate, close so viewers see the artifact with its context."""
    out = morphology(mask, "open", VIEW_OPEN_SE)
    out = morphology(out, "dilate", VIEW_DILATE_SE)
    out = morphology(out, "close", VIEW_CLOSE_SE)
    if not out.bits.any():
        raise NoDisplayableArtifact("no displayable artifact")
    return BinaryMask(bits=out.bits, display_dilated=True)


def undo_dilation(mask: BinaryMask) -> BinaryMask:
    """Erode a display-dilated mask back with the viewer-prep disk."""
    if not mask.display_dilated:
        warnings.warn("mask is not display-dilated; returning it unchanged", stacklevel=2)
        return mask
    out = morphology(mask, "erode", VIEW_DILATE_SE)
    return BinaryMask(bits=out.bits, display_dilated=False)


def _to_rgb(data: np.ndarray) -> np.ndarray:
    if data.shape[2] == 3:
        return data.copy()
    return np.repeat(data, 3, axis=2)


def _draw_box(canvas: np.ndarray, rect: Rect, width: int) -> None:
    h, w = canvas.shape[:2]
    color = np.asarray(BOX_COLOR)
    for t in range(width):
        x0, y0 = max(0, rect.x0 - t), max(0, rect.y0 - t)
        x1, y1 = min(w - 1, rect.x1 + t), min(h - 1, rect.y1 + t)
        canvas[y0, x0 : x1 + 1] = color
        canvas[y1, x0 : x1 + 1] = color
        canvas[y0 : y1 + 1, x0] = color
        canvas[y0 : y1 + 1, x1] = color


def render_annotation_pair(
    lr: ImageBuffer,
    sr: ImageBuffer,
    mask: BinaryMask,
    crop: Rect | None = None,
) -> tuple[ImageBuffer, ImageBuffer]:
    """Viewer image pair: nearest-upscaled original and the SR output.

    The masked region is lightened (v -> 0.5*v + 0.5) and each component's
    bounding box gets a 3-px red outline on both images; an optional crop is
    applied identically to both.
    """
    if sr.width % lr.width != 0 or sr.height % lr.height != 0:
        raise ValidationError(
            f"SR size {sr.width}x{sr.height} is not an integer multiple of "
            f"LR size {lr.width}x{lr.height}"
        )
    if sr.width // lr.width != sr.height // lr.height:
        raise ValidationError("LR-to-SR scale differs between axes")
    if (mask.height, mask.width) != (sr.height, sr.width):
        raise ValidationError("mask must match the SR dimensions")

    original = _to_rgb(resize(lr, sr.width, sr.height, mode="nearest").data)
    upscaled = _to_rgb(sr.data)

    inside = mask.bits
    for canvas in (original, upscaled):
        canvas[inside] = HIGHLIGHT_LIGHTEN * canvas[inside] + (1.0 - HIGHLIGHT_LIGHTEN)

    if inside.any():
        labeling = connected_components(mask)
        for label in range(1, labeling.component_count + 1):
            component = BinaryMask(bits=labeling.labels == label)
            rect = padded_bbox(component, 0)
            _draw_box(original, rect, BOX_WIDTH)
            _draw_box(upscaled, rect, BOX_WIDTH)

    if crop is not None:
        ys, xs = crop.slices()
        original = original[ys, xs]
        upscaled = upscaled[ys, xs]
    return ImageBuffer(data=original), ImageBuffer(data=upscaled)
