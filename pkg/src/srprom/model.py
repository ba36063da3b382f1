"""Shared data types, the dataset manifest, and the raster file formats.

Images, heatmaps and masks are carried as immutable numpy-backed containers.
Heatmaps are interchanged in the SRPH format: an ASCII magic line, a one-line
JSON header, then row-major little-endian float32 values. Masks are 8-bit
single-channel PNGs (0 = background, nonzero = mask).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from PIL import Image

DISTORTION_HIGH = "distortion-high"
SIMILARITY_HIGH = "similarity-high"
POLARITIES = (DISTORTION_HIGH, SIMILARITY_HIGH)

SRPH_MAGIC = b"SRPH\n"
SRPM_MAGIC = b"SRPM\n"

MANIFEST_FIELDS = (
    "component",
    "source",
    "sr",
    "metric",
    "mask",
    "display_dilated",
    "votes_pos",
    "votes_total",
    "prominence",
)


class SrpromError(Exception):
    """Base class for toolkit errors."""


class ValidationError(SrpromError):
    """Input violates a documented contract."""


class FormatError(ValidationError):
    """A file does not conform to its declared format."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ImageBuffer:
    """H x W x C raster of intensities in [0, 1], C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValidationError(f"image must be HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("image must have at least one pixel")
        if not np.isfinite(arr).all():
            raise ValidationError("image intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Heatmap:
    """H x W scalar field with a declared polarity.

    ``distortion-high`` maps grow where the image is worse; ``similarity-high``
    maps (SSIM-style) grow where it is better. The polarity decides the
    threshold comparator and whether the scorer negates values.
    """

    values: np.ndarray
    polarity: str = DISTORTION_HIGH

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"heatmap must be a non-empty 2-D field, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("heatmap values must be finite")
        if self.polarity not in POLARITIES:
            raise ValidationError(f"unknown polarity {self.polarity!r}")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """H x W boolean raster; ``display_dilated`` records the viewer-prep state."""

    bits: np.ndarray
    display_dilated: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.bits)
        if arr.dtype != np.bool_:
            raise ValidationError(f"mask bits must be boolean, got dtype {arr.dtype}")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"mask must be a non-empty 2-D raster, got shape {arr.shape}")
        object.__setattr__(self, "bits", _freeze(arr))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


PROMINENCE_TOL = 1e-12


@dataclass(frozen=True)
class ArtifactRecord:
    """One annotated artifact mask and its crowdsourced vote tally."""

    component_id: str
    source_image_id: str
    sr_method_id: str
    metric_id: str
    mask_path: str
    votes_positive: int
    votes_total: int
    prominence: float
    display_dilated: bool = False

    def __post_init__(self) -> None:
        if self.votes_positive < 0 or self.votes_total < 0:
            raise ValidationError("vote counts must be non-negative")
        if self.votes_positive > self.votes_total:
            raise ValidationError(
                f"votes_positive {self.votes_positive} exceeds votes_total {self.votes_total}"
            )
        if not (0.0 <= self.prominence <= 1.0):
            raise ValidationError(f"prominence {self.prominence} outside [0, 1]")
        if self.votes_total > 0:
            expected = self.votes_positive / self.votes_total
            if abs(self.prominence - expected) > PROMINENCE_TOL:
                raise ValidationError(
                    f"prominence {self.prominence} != votes_positive/votes_total {expected}"
                )

    @classmethod
    def from_votes(
        cls,
        component_id: str,
        source_image_id: str,
        sr_method_id: str,
        metric_id: str,
        mask_path: str,
        votes_positive: int,
        votes_total: int,
        display_dilated: bool = False,
    ) -> "ArtifactRecord":
        prominence = votes_positive / votes_total if votes_total > 0 else 0.0
        return cls(
            component_id,
            source_image_id,
            sr_method_id,
            metric_id,
            mask_path,
            votes_positive,
            votes_total,
            prominence,
            display_dilated,
        )


@dataclass(frozen=True)
class StructuringElement:
    """Square or disk neighborhood used by the morphology operations.

    ``square(k)`` holds k*k offsets around the origin (even k anchors at
    k//2, so offsets span -k//2 .. k//2-1). ``disk(d)`` holds exactly the
    integer offsets with dy^2 + dx^2 <= (d/2)^2.
    """

    shape: str
    size: int

    def __post_init__(self) -> None:
        if self.shape not in ("square", "disk"):
            raise ValidationError(f"unknown structuring element shape {self.shape!r}")
        if self.size < 1:
            raise ValidationError("structuring element size must be >= 1")

    @classmethod
    def square(cls, size: int) -> "StructuringElement":
        return cls("square", size)

    @classmethod
    def disk(cls, size: int) -> "StructuringElement":
        return cls("disk", size)

    @cached_property
    def offsets(self) -> np.ndarray:
        """(n, 2) int32 array of (dy, dx) offsets, row-major order."""
        if self.shape == "square":
            lo = -(self.size // 2)
            hi = self.size - self.size // 2
            coords = [(dy, dx) for dy in range(lo, hi) for dx in range(lo, hi)]
        else:
            bound = self.size // 2
            # 4*(dy^2+dx^2) <= size^2 keeps the radius test in exact integers
            limit = self.size * self.size
            coords = [
                (dy, dx)
                for dy in range(-bound, bound + 1)
                for dx in range(-bound, bound + 1)
                if 4 * (dy * dy + dx * dx) <= limit
            ]
        return _freeze(np.asarray(coords, dtype=np.int32).reshape(-1, 2))


# ---------------------------------------------------------------------------
# Manifest I/O


def _record_to_row(record: ArtifactRecord) -> dict:
    return {
        "component": record.component_id,
        "source": record.source_image_id,
        "sr": record.sr_method_id,
        "metric": record.metric_id,
        "mask": record.mask_path,
        "display_dilated": record.display_dilated,
        "votes_pos": record.votes_positive,
        "votes_total": record.votes_total,
        "prominence": record.prominence,
    }


def _row_to_record(row: dict, index: int) -> ArtifactRecord:
    if not isinstance(row, dict):
        raise FormatError(f"record {index}: expected an object, got {type(row).__name__}")
    missing = [k for k in MANIFEST_FIELDS if k not in row]
    if missing:
        raise FormatError(f"record {index}: missing fields {missing}")
    try:
        return ArtifactRecord(
            component_id=str(row["component"]),
            source_image_id=str(row["source"]),
            sr_method_id=str(row["sr"]),
            metric_id=str(row["metric"]),
            mask_path=str(row["mask"]),
            votes_positive=int(row["votes_pos"]),
            votes_total=int(row["votes_total"]),
            prominence=float(row["prominence"]),
            display_dilated=bool(row["display_dilated"]),
        )
    except ValidationError as exc:
        raise FormatError(f"record {index}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise FormatError(f"record {index}: malformed field ({exc})") from exc


def write_manifest(records: list[ArtifactRecord], path: str | Path) -> None:
    rows = [_record_to_row(r) for r in records]
    Path(path).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[ArtifactRecord]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise FormatError("manifest must be a JSON array of record objects")
    return [_row_to_record(row, i) for i, row in enumerate(data)]


# ---------------------------------------------------------------------------
# SRPH heatmap format


@dataclass(frozen=True)
class BlockMeta:
    """Block-grid metadata carried in an SRPH header for grid-valued files."""

    size: int
    stride: int
    image_width: int
    image_height: int

    def grid_shape(self) -> tuple[int, int]:
        """(rows, cols) a valid grid must have for this image size."""
        gh = (self.image_height - self.size) // self.stride + 1
        gw = (self.image_width - self.size) // self.stride + 1
        return gh, gw


@dataclass(frozen=True)
class SrphFile:
    """Decoded SRPH contents: raw values plus the optional block metadata."""

    values: np.ndarray
    polarity: str
    block: BlockMeta | None = None


def write_srph(
    path: str | Path,
    values: np.ndarray,
    polarity: str,
    block: BlockMeta | None = None,
) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise FormatError(f"SRPH payload must be 2-D, got shape {arr.shape}")
    if polarity not in POLARITIES:
        raise FormatError(f"unknown polarity {polarity!r}")
    arr = arr.astype("<f4")
    if not np.isfinite(arr).all():
        raise FormatError("SRPH payload must be finite")
    header: dict = {"w": int(arr.shape[1]), "h": int(arr.shape[0]), "polarity": polarity}
    if block is not None:
        header["block"] = {
            "size": block.size,
            "stride": block.stride,
            "image_w": block.image_width,
            "image_h": block.image_height,
        }
    with open(path, "wb") as fh:
        fh.write(SRPH_MAGIC)
        fh.write((json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_srph(path: str | Path) -> SrphFile:
    raw = Path(path).read_bytes()
    if not raw.startswith(SRPH_MAGIC):
        raise FormatError(f"{path}: bad magic, not an SRPH file")
    nl = raw.find(b"\n", len(SRPH_MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[len(SRPH_MAGIC) : nl].decode("ascii"))
        w, h = int(header["w"]), int(header["h"])
        polarity = header["polarity"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed SRPH header ({exc})") from exc
    if polarity not in POLARITIES:
        raise FormatError(f"{path}: unknown polarity {polarity!r}")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: invalid dimensions {w}x{h}")
    payload = raw[nl + 1 :]
    expected = w * h * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload length {len(payload)} does not match header "
            f"({h}x{w} floats = {expected} bytes)"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    if not np.isfinite(values).all():
        raise FormatError(f"{path}: payload contains non-finite values")
    block = None
    if "block" in header:
        try:
            b = header["block"]
            block = BlockMeta(
                size=int(b["size"]),
                stride=int(b["stride"]),
                image_width=int(b["image_w"]),
                image_height=int(b["image_h"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed block metadata ({exc})") from exc
        if block.size < 1 or block.stride < 1:
            raise FormatError(f"{path}: invalid block metadata {block}")
    return SrphFile(values=values, polarity=polarity, block=block)


def write_heatmap(heatmap: Heatmap, path: str | Path) -> None:
    write_srph(path, heatmap.values, heatmap.polarity)


def read_heatmap(path: str | Path) -> Heatmap:
    decoded = read_srph(path)
    if decoded.block is not None:
        raise FormatError(
            f"{path}: file is a block grid; use the block-heatmap ingestion path"
        )
    return Heatmap(values=decoded.values.astype(np.float64), polarity=decoded.polarity)


# ---------------------------------------------------------------------------
# Mask and image PNG I/O


def write_mask(mask: BinaryMask, path: str | Path) -> None:
    arr = np.where(mask.bits, np.uint8(255), np.uint8(0))
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_mask(path: str | Path, display_dilated: bool = False) -> BinaryMask:
    with Image.open(path) as im:
        if im.mode != "L":
            raise FormatError(
                f"{path}: masks must be 8-bit single-channel PNG, got mode {im.mode!r}"
            )
        bits = np.asarray(im) != 0
    return BinaryMask(bits=bits, display_dilated=display_dilated)


def write_image(image: ImageBuffer, path: str | Path) -> None:
    arr = np.rint(image.data * 255.0).astype(np.uint8)
    if image.channels == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_image(path: str | Path) -> ImageBuffer:
    with Image.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float64)[:, :, None] / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageBuffer(data=arr)
