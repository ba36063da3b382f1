"""Artifact heatmap providers and block-grid ingestion.

The native providers are a per-pixel SSIM map, a residual-variance feature
(summed-RGB absolute residual, 33x33 windowed variance, global-variance^(1/5)
scaling, sigma=33 smoothing, SR minus bicubic), a block edge-consistency score,
and their block-wise composition 0.6*lpips + 0.4*(1 - erqa). Externally
computed maps (DISTS, LPIPS, third-party detectors) enter as SRPH files and
are expanded from block grids to pixel resolution here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    DISTORTION_HIGH,
    POLARITIES,
    SIMILARITY_HIGH,
    BlockMeta,
    FormatError,
    Heatmap,
    ImageBuffer,
    ValidationError,
    read_srph,
)
from .raster import (
    _blur_array,
    _local_variance_array,
    _sep_filter,
    reflect_indices,
    to_grayscale,
)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

RESIDUAL_WINDOW = 33
RESIDUAL_SIGMA = 33.0
GLOBAL_VAR_EXPONENT = 0.2

ERQA_BLOCK = 8
ERQA_EDGE_FRACTION = 0.25
ERQA_MATCH_DISTANCE = 1

LPIPS_BLOCK = 32
LPIPS_STRIDE = 16
DISTS_BLOCK = 16

BLOCK_COMBO_LPIPS_WEIGHT = 0.6
BLOCK_COMBO_ERQA_WEIGHT = 0.4


@dataclass(frozen=True)
class BlockGrid:
    """Scores on a regular block grid over an image.

    Grid dimensions must equal floor((image_dim - block_size) / stride) + 1
    per axis.
    """

    scores: np.ndarray
    block_size: int
    stride: int
    image_width: int
    image_height: int
    polarity: str = DISTORTION_HIGH

    def __post_init__(self) -> None:
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"block grid must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("block grid scores must be finite")
        if self.polarity not in POLARITIES:
            raise ValidationError(f"unknown polarity {self.polarity!r}")
        if self.block_size < 1 or self.stride < 1:
            raise ValidationError("block size and stride must be >= 1")
        expected = self.expected_shape(
            self.image_width, self.image_height, self.block_size, self.stride
        )
        if arr.shape != expected:
            raise ValidationError(
                f"grid shape {arr.shape} does not match image "
                f"{self.image_width}x{self.image_height} at block {self.block_size} "
                f"stride {self.stride}; expected {expected[0]}x{expected[1]}"
            )
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "scores", arr)

    @staticmethod
    def expected_shape(
        image_width: int, image_height: int, block_size: int, stride: int
    ) -> tuple[int, int]:
        if image_width < block_size or image_height < block_size:
            raise ValidationError(
                f"image {image_width}x{image_height} smaller than block {block_size}"
            )
        return (
            (image_height - block_size) // stride + 1,
            (image_width - block_size) // stride + 1,
        )


@dataclass(frozen=True)
class ProviderSpec:
    """Registry entry: polarity decides the comparator direction."""

    name: str
    polarity: str
    comparator: str
    native_threshold: float

    def __post_init__(self) -> None:
        if self.polarity not in POLARITIES:
            raise ValidationError(f"unknown polarity {self.polarity!r}")
        if self.comparator not in ("above", "below"):
            raise ValidationError(f"comparator must be 'above' or 'below', got {self.comparator!r}")
        if not np.isfinite(self.native_threshold):
            raise ValidationError("native threshold must be finite")
        expected = "below" if self.polarity == SIMILARITY_HIGH else "above"
        if self.comparator != expected:
            raise ValidationError(
                f"comparator {self.comparator!r} inconsistent with polarity {self.polarity!r}"
            )


DEFAULT_PROVIDERS: dict[str, ProviderSpec] = {
    spec.name: spec
    for spec in (
        ProviderSpec("ssim", SIMILARITY_HIGH, "below", 0.55),
        ProviderSpec("dists", DISTORTION_HIGH, "above", 0.25),
        ProviderSpec("ssm_jup", DISTORTION_HIGH, "above", 0.15),
        ProviderSpec("bd_jup", DISTORTION_HIGH, "above", 0.1),
        ProviderSpec("baseline", DISTORTION_HIGH, "above", 0.3),
        ProviderSpec("ldl", DISTORTION_HIGH, "above", 0.005),
    )
}


def load_provider_registry(path: str | Path) -> dict[str, ProviderSpec]:
    """Read a JSON provider list: [{name, polarity, comparator, threshold}, ...]."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"provider registry is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise FormatError("provider registry must be a JSON array")
    registry = dict(DEFAULT_PROVIDERS)
    for i, row in enumerate(data):
        try:
            spec = ProviderSpec(
                name=str(row["name"]),
                polarity=str(row["polarity"]),
                comparator=str(row["comparator"]),
                native_threshold=float(row["threshold"]),
            )
        except (KeyError, TypeError, ValueError, ValidationError) as exc:
            raise FormatError(f"provider entry {i}: {exc}") from exc
        registry[spec.name] = spec
    return registry


def _require_same_size(a, b, what: str) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ValidationError(
            f"{what}: dimension mismatch {a.width}x{a.height} vs {b.width}x{b.height}"
        )


# ---------------------------------------------------------------------------
# SSIM


def ssim_map(ref: ImageBuffer, test: ImageBuffer) -> Heatmap:
    """Per-pixel SSIM with an 11x11 Gaussian window (sigma 1.5) on luma.

    Constants C1 = (0.01)^2 and C2 = (0.03)^2 for the [0, 1] dynamic range.
    """
    _require_same_size(ref, test, "ssim_map")
    x = to_grayscale(ref).data[:, :, 0]
    y = to_grayscale(test).data[:, :, 0]
    radius = (SSIM_WINDOW - 1) // 2
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    window = np.exp(-0.5 * (taps / SSIM_SIGMA) ** 2)
    window = window / window.sum()

    mu_x = _sep_filter(x, window)
    mu_y = _sep_filter(y, window)
    xx = _sep_filter(x * x, window)
    yy = _sep_filter(y * y, window)
    xy = _sep_filter(x * y, window)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return Heatmap(values=num / den, polarity=SIMILARITY_HIGH)


# ---------------------------------------------------------------------------
# Residual-variance feature (SR vs bicubic)


def _scaled_residual_map(image: ImageBuffer, ref: ImageBuffer) -> np.ndarray:
    residual = np.abs(image.data - ref.data).sum(axis=2)
    windowed = _local_variance_array(residual, RESIDUAL_WINDOW)
    global_scale = float(np.var(residual)) ** GLOBAL_VAR_EXPONENT
    return _blur_array(global_scale * windowed, RESIDUAL_SIGMA)


def ssm_jup(ref: ImageBuffer, sr: ImageBuffer, bic: ImageBuffer) -> Heatmap:
    """Residual-variance contrast of the SR output against its bicubic baseline."""
    for name, img in (("sr", sr), ("bic", bic)):
        _require_same_size(ref, img, f"ssm_jup({name})")
        if img.channels != 3:
            raise ValidationError(f"ssm_jup requires 3-channel images, {name} has {img.channels}")
    if ref.channels != 3:
        raise ValidationError(f"ssm_jup requires 3-channel images, ref has {ref.channels}")
    values = _scaled_residual_map(sr, ref) - _scaled_residual_map(bic, ref)
    return Heatmap(values=values, polarity=DISTORTION_HIGH)


# ---------------------------------------------------------------------------
# Block edge consistency


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    """Gradient magnitude from 3x3 Sobel operators, reflected borders."""
    # separable: smooth [1,2,1] along one axis, difference [1,0,-1] along the other
    smooth = np.array([1.0, 2.0, 1.0])
    diff = np.array([1.0, 0.0, -1.0])
    iy = reflect_indices(gray.shape[0], 1)
    ix = reflect_indices(gray.shape[1], 1)
    padded = gray[np.ix_(iy, ix)]

    def corr(arr: np.ndarray, kr: np.ndarray, axis: int) -> np.ndarray:
        out = np.zeros(
            (arr.shape[0] - (2 if axis == 0 else 0), arr.shape[1] - (2 if axis == 1 else 0))
        )
        for t in range(3):
            if axis == 0:
                out += kr[t] * arr[t : t + out.shape[0], :]
            else:
                out += kr[t] * arr[:, t : t + out.shape[1]]
        return out

    gx = corr(corr(padded, diff, axis=1), smooth, axis=0)
    gy = corr(corr(padded, smooth, axis=1), diff, axis=0)
    return np.sqrt(gx * gx + gy * gy)


def _block_edges(magnitude_block: np.ndarray) -> np.ndarray:
    """(n, 2) coordinates of pixels above 25% of the block's max gradient."""
    peak = magnitude_block.max()
    if peak <= 0.0:
        return np.empty((0, 2), dtype=np.int64)
    return np.argwhere(magnitude_block > ERQA_EDGE_FRACTION * peak)


def _coverage_fraction(points: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of ``points`` with a target within Chebyshev distance 1."""
    if points.shape[0] == 0:
        return 0.0
    if targets.shape[0] == 0:
        return 0.0
    dy = np.abs(points[:, None, 0] - targets[None, :, 0])
    dx = np.abs(points[:, None, 1] - targets[None, :, 1])
    matched = (np.maximum(dy, dx) <= ERQA_MATCH_DISTANCE).any(axis=1)
    return float(matched.sum()) / points.shape[0]


def block_edge_f1(ref_edges: np.ndarray, test_edges: np.ndarray) -> float:
    """F1 of mutual nearest-edge coverage; both sets empty scores 1."""
    if ref_edges.shape[0] == 0 and test_edges.shape[0] == 0:
        return 1.0
    precision = _coverage_fraction(test_edges, ref_edges)
    recall = _coverage_fraction(ref_edges, test_edges)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def erqa_map(ref: ImageBuffer, test: ImageBuffer) -> BlockGrid:
    """Edge-restoration score on non-overlapping 8x8 blocks.

    Edge pixels are Sobel responses above 25% of the block maximum; test and
    reference edges match within Chebyshev distance 1 inside the block. This
    reconstruction of the cited edge metric keeps its parameters explicit.
    """
    _require_same_size(ref, test, "erqa_map")
    gm_ref = sobel_magnitude(to_grayscale(ref).data[:, :, 0])
    gm_test = sobel_magnitude(to_grayscale(test).data[:, :, 0])
    gh, gw = BlockGrid.expected_shape(ref.width, ref.height, ERQA_BLOCK, ERQA_BLOCK)
    scores = np.empty((gh, gw), dtype=np.float64)
    for by in range(gh):
        for bx in range(gw):
            ys = slice(by * ERQA_BLOCK, by * ERQA_BLOCK + ERQA_BLOCK)
            xs = slice(bx * ERQA_BLOCK, bx * ERQA_BLOCK + ERQA_BLOCK)
            scores[by, bx] = block_edge_f1(
                _block_edges(gm_ref[ys, xs]), _block_edges(gm_test[ys, xs])
            )
    return BlockGrid(
        scores=scores,
        block_size=ERQA_BLOCK,
        stride=ERQA_BLOCK,
        image_width=ref.width,
        image_height=ref.height,
        polarity=SIMILARITY_HIGH,
    )


# ---------------------------------------------------------------------------
# Block-grid expansion and composition


def expand_block_grid(grid: BlockGrid) -> np.ndarray:
    """Pixel-resolution expansion of a block grid.

    Non-overlapping grids tile; overlapping grids average every covering block
    per pixel. Trailing pixels not covered by any full block inherit the
    nearest covered pixel's value (edge extension).
    """
    h, w = grid.image_height, grid.image_width
    gh, gw = grid.scores.shape
    if grid.stride == grid.block_size:
        iy = np.clip(np.arange(h) // grid.stride, 0, gh - 1)
        ix = np.clip(np.arange(w) // grid.stride, 0, gw - 1)
        return grid.scores[np.ix_(iy, ix)]
    total = np.zeros((h, w), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.float64)
    for by in range(gh):
        for bx in range(gw):
            ys = slice(by * grid.stride, by * grid.stride + grid.block_size)
            xs = slice(bx * grid.stride, bx * grid.stride + grid.block_size)
            total[ys, xs] += grid.scores[by, bx]
            count[ys, xs] += 1.0
    covered_h = (gh - 1) * grid.stride + grid.block_size
    covered_w = (gw - 1) * grid.stride + grid.block_size
    out = np.zeros((h, w), dtype=np.float64)
    region = (slice(0, covered_h), slice(0, covered_w))
    out[region] = total[region] / count[region]
    if covered_h < h:
        out[covered_h:, :covered_w] = out[covered_h - 1, :covered_w]
    if covered_w < w:
        out[:, covered_w:] = out[:, covered_w - 1][:, None]
    return out


def bd_jup(lpips: BlockGrid, erqa: BlockGrid) -> Heatmap:
    """Block-wise distortion composition: 0.6 * lpips + 0.4 * (1 - erqa)."""
    if (lpips.image_width, lpips.image_height) != (erqa.image_width, erqa.image_height):
        raise ValidationError(
            f"bd_jup: grids describe different images "
            f"{lpips.image_width}x{lpips.image_height} vs {erqa.image_width}x{erqa.image_height}"
        )
    lp = expand_block_grid(lpips)
    eq = expand_block_grid(erqa)
    values = BLOCK_COMBO_LPIPS_WEIGHT * lp + BLOCK_COMBO_ERQA_WEIGHT * (1.0 - eq)
    return Heatmap(values=values, polarity=DISTORTION_HIGH)


def ingest_block_heatmap(
    path: str | Path,
    spec: ProviderSpec,
    image_size: tuple[int, int] | None = None,
    block: tuple[int, int] | None = None,
) -> Heatmap:
    """Load an SRPH file as a pixel heatmap, expanding block grids.

    ``image_size`` is (width, height); ``block`` is (size, stride) for files
    whose header lacks grid metadata. Grid dimensions are validated against
    the block arithmetic.
    """
    decoded = read_srph(path)
    values = decoded.values.astype(np.float64)
    meta = decoded.block
    if meta is None and block is not None:
        if image_size is None:
            raise ValidationError("a declared block grid requires image_size")
        meta = BlockMeta(
            size=block[0], stride=block[1], image_width=image_size[0], image_height=image_size[1]
        )
    if meta is None:
        if image_size is not None and (values.shape[1], values.shape[0]) != image_size:
            raise FormatError(
                f"{path}: pixel map is {values.shape[1]}x{values.shape[0]}, "
                f"expected {image_size[0]}x{image_size[1]}"
            )
        return Heatmap(values=values, polarity=spec.polarity)
    if image_size is not None and (meta.image_width, meta.image_height) != image_size:
        raise FormatError(
            f"{path}: block grid describes image {meta.image_width}x{meta.image_height}, "
            f"expected {image_size[0]}x{image_size[1]}"
        )
    expected = meta.grid_shape()
    if values.shape != expected:
        raise FormatError(
            f"{path}: grid is {values.shape[0]}x{values.shape[1]}, but a "
            f"{meta.image_width}x{meta.image_height} image at block {meta.size} "
            f"stride {meta.stride} requires {expected[0]}x{expected[1]}"
        )
    grid = BlockGrid(
        scores=values,
        block_size=meta.size,
        stride=meta.stride,
        image_width=meta.image_width,
        image_height=meta.image_height,
        polarity=spec.polarity,
    )
    return Heatmap(values=expand_block_grid(grid), polarity=spec.polarity)
