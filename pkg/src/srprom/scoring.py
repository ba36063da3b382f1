"""Threshold-free prominence scoring, benchmark tables, threshold calibration.

The threshold-free score correlates, over all masks of a dataset component,
the heatmap contrast (median inside the mask minus median outside) with the
crowdsourced prominence. Display-dilated masks are eroded back first so the
inside region matches the original localization.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from .masks import undo_dilation
from .model import (
    SIMILARITY_HIGH,
    ArtifactRecord,
    BinaryMask,
    Heatmap,
    ValidationError,
)
from .providers import ProviderSpec
from .votes import PROMINENT_CUTOFF

SKIP_WARNING_FRACTION = 0.10
CALIBRATION_MAX_GRID = 512
CALIBRATION_RECALL_OVERLAP = 0.3


class UndefinedCorrelation(ValidationError):
    """Correlation has no value (too few points or zero rank variance)."""


class ContrastUndefined(ValidationError):
    """The record's mask leaves no usable inside/outside split."""


def mask_contrast(heatmap: Heatmap, mask: BinaryMask) -> float:
    """Median heatmap value inside the mask minus the median outside.

    Similarity-high maps are negated so larger always means more artifact.
    Binary detector outputs are scored the same way as 0/1 heatmaps.
    """
    if (mask.height, mask.width) != (heatmap.height, heatmap.width):
        raise ValidationError(
            f"mask {mask.width}x{mask.height} does not match heatmap "
            f"{heatmap.width}x{heatmap.height}"
        )
    if mask.display_dilated:
        mask = undo_dilation(mask)
    bits = mask.bits
    if not bits.any():
        raise ContrastUndefined("mask is empty after undoing display dilation")
    if bits.all():
        raise ContrastUndefined("mask covers the whole image; no outside region")
    values = heatmap.values
    if heatmap.polarity == SIMILARITY_HIGH:
        values = -values
    return float(np.median(values[bits]) - np.median(values[~bits]))


def average_ranks(values) -> np.ndarray:
    """1-based ranks; ties receive the mean of the ranks they occupy."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="mergesort")
    ranks = np.empty(arr.size, dtype=np.float64)
    sorted_vals = arr[order]
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Rank correlation: Pearson correlation of average-ranked values."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValidationError("inputs must be 1-D sequences of equal length")
    if xs.size < 2:
        raise UndefinedCorrelation("need at least two points")
    rx = average_ranks(xs)
    ry = average_ranks(ys)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        raise UndefinedCorrelation("zero rank variance")
    return float((dx * dy).sum() / denom)


@dataclass(frozen=True)
class ScoreResult:
    srcc: float | None
    n_scored: int
    n_total: int
    skipped: tuple[tuple[str, str], ...]
    warning: bool
    undefined_reason: str | None = None

    def to_json(self) -> dict:
        return {
            "srcc": self.srcc,
            "n_scored": self.n_scored,
            "n_total": self.n_total,
            "skipped": [{"record": rid, "reason": reason} for rid, reason in self.skipped],
            "warning": self.warning,
            "undefined_reason": self.undefined_reason,
        }


def record_key(record: ArtifactRecord) -> str:
    return "/".join(
        (record.component_id, record.source_image_id, record.sr_method_id, record.metric_id)
    )


def prominence_score(
    records: list[ArtifactRecord],
    heatmap_for: Callable[[ArtifactRecord], Heatmap],
    mask_for: Callable[[ArtifactRecord], BinaryMask],
) -> ScoreResult:
    """Rank correlation of mask contrasts against crowdsourced prominence.

    Records whose contrast is undefined are skipped and listed; more than 10%
    skips raises the warning flag.
    """
    contrasts: list[float] = []
    prominences: list[float] = []
    skipped: list[tuple[str, str]] = []
    for record in records:
        heatmap = heatmap_for(record)
        mask = mask_for(record)
        try:
            contrasts.append(mask_contrast(heatmap, mask))
        except ContrastUndefined as exc:
            skipped.append((record_key(record), str(exc)))
            continue
        prominences.append(record.prominence)
    warning = bool(records) and len(skipped) > SKIP_WARNING_FRACTION * len(records)
    try:
        srcc: float | None = spearman(contrasts, prominences)
        reason = None
    except UndefinedCorrelation as exc:
        srcc = None
        reason = str(exc)
    return ScoreResult(
        srcc=srcc,
        n_scored=len(contrasts),
        n_total=len(records),
        skipped=tuple(skipped),
        warning=warning,
        undefined_reason=reason,
    )


# ---------------------------------------------------------------------------
# Benchmark tables


@dataclass(frozen=True)
class DetectorRow:
    metric_id: str
    masks_found: int
    mean_prominence: float
    confident_count: int
    prom_x_conf: float

    def to_json(self) -> dict:
        return {
            "metric": self.metric_id,
            "masks_found": self.masks_found,
            "mean_prominence": self.mean_prominence,
            "confident_count": self.confident_count,
            "prom_x_conf": self.prom_x_conf,
        }


@dataclass(frozen=True)
class SrRow:
    sr_method_id: str
    masks_found: int
    mean_prominence: float
    confident_count: int

    def to_json(self) -> dict:
        return {
            "sr": self.sr_method_id,
            "masks_found": self.masks_found,
            "mean_prominence": self.mean_prominence,
            "confident_count": self.confident_count,
        }


def detector_table(records: list[ArtifactRecord]) -> list[DetectorRow]:
    """Per-metric mask counts, mean prominence, and the Prom x Conf product."""
    groups: dict[str, list[float]] = {}
    for record in records:
        groups.setdefault(record.metric_id, []).append(record.prominence)
    rows = []
    for metric_id in sorted(groups):
        proms = groups[metric_id]
        mean = sum(proms) / len(proms)
        confident = sum(1 for p in proms if p >= PROMINENT_CUTOFF)
        rows.append(
            DetectorRow(
                metric_id=metric_id,
                masks_found=len(proms),
                mean_prominence=mean,
                confident_count=confident,
                prom_x_conf=mean * confident,
            )
        )
    return rows


def dedup_best_per_image(records: list[ArtifactRecord]) -> list[ArtifactRecord]:
    """Keep, per (SR method, source image), the highest-prominence record.

    Ties break toward the lexicographically smallest metric id.
    """
    best: dict[tuple[str, str], ArtifactRecord] = {}
    for record in records:
        key = (record.sr_method_id, record.source_image_id)
        cur = best.get(key)
        if (
            cur is None
            or record.prominence > cur.prominence
            or (record.prominence == cur.prominence and record.metric_id < cur.metric_id)
        ):
            best[key] = record
    return [best[key] for key in sorted(best)]


def sr_table(records: list[ArtifactRecord]) -> list[SrRow]:
    """Per-SR rows over per-image deduplicated records (lower is better)."""
    deduped = dedup_best_per_image(records)
    groups: dict[str, list[float]] = {}
    for record in deduped:
        groups.setdefault(record.sr_method_id, []).append(record.prominence)
    rows = []
    for sr_method_id in sorted(groups):
        proms = groups[sr_method_id]
        rows.append(
            SrRow(
                sr_method_id=sr_method_id,
                masks_found=len(proms),
                mean_prominence=sum(proms) / len(proms),
                confident_count=sum(1 for p in proms if p >= PROMINENT_CUTOFF),
            )
        )
    return rows


def render_detector_markdown(rows: list[DetectorRow]) -> str:
    lines = [
        "| Method | Masks Found | Mean Prominence | Conf. Masks Found | Prom. x Conf. |",
        "| --- | ---: | ---: | ---: | ---: |",
    ]
    for r in rows:
        lines.append(
            f"| {r.metric_id} | {r.masks_found} | {100 * r.mean_prominence:.2f}% "
            f"| {r.confident_count} | {r.prom_x_conf:.2f} |"
        )
    return "\n".join(lines) + "\n"


def render_sr_markdown(rows: list[SrRow]) -> str:
    lines = [
        "| SR | Masks Found | Mean Prominence | Conf. Masks Found |",
        "| --- | ---: | ---: | ---: |",
    ]
    for r in rows:
        lines.append(
            f"| {r.sr_method_id} | {r.masks_found} | {100 * r.mean_prominence:.2f}% "
            f"| {r.confident_count} |"
        )
    return "\n".join(lines) + "\n"


def rank_agreement(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    """Rank correlation between two scores over the same keys.

    Used to verify that the crowd-free ranking (e.g. contrast SRCC) agrees
    with the crowdsourced Prom x Conf ranking.
    """
    if set(a) != set(b):
        raise ValidationError(
            f"score sets differ: {sorted(set(a) ^ set(b))} present on one side only"
        )
    keys = sorted(a)
    if len(keys) < 2:
        raise UndefinedCorrelation("need at least two methods to compare rankings")
    return spearman([a[k] for k in keys], [b[k] for k in keys])


# ---------------------------------------------------------------------------
# Threshold calibration


@dataclass(frozen=True)
class CalibrationItem:
    """One image's heatmap with its ground-truth prominent masks."""

    heatmap: Heatmap
    gt_masks: tuple[BinaryMask, ...]


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    precision: float
    recall: float
    pr_product: float
    predicted_pixels: int

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "precision": self.precision,
            "recall": self.recall,
            "pr_product": self.pr_product,
            "predicted_pixels": self.predicted_pixels,
        }


class CalibrationError(ValidationError):
    """No usable threshold exists (e.g. constant heatmaps)."""


def _candidate_thresholds(items: list[CalibrationItem]) -> np.ndarray:
    values = np.unique(np.concatenate([item.heatmap.values.ravel() for item in items]))
    if values.size < 2:
        raise CalibrationError("degenerate heatmaps: fewer than two distinct values")
    # midpoints between consecutive distinct values partition them cleanly
    # under the strict comparators
    mids = 0.5 * (values[:-1] + values[1:])
    if mids.size > CALIBRATION_MAX_GRID:
        picks = np.linspace(0, mids.size - 1, CALIBRATION_MAX_GRID).round().astype(np.int64)
        mids = mids[np.unique(picks)]
    return mids


def calibrate_threshold(
    spec: ProviderSpec, items: list[CalibrationItem]
) -> CalibrationResult:
    """Threshold maximizing precision x recall on the labeled prominent set.

    Precision is the fraction of predicted pixels inside ground-truth masks;
    recall is the fraction of ground-truth masks with predicted overlap of at
    least 30% of their area. Ties pick the more conservative threshold (fewer
    predicted pixels).
    """
    if not items:
        raise ValidationError("calibration requires at least one labeled item")
    total_masks = sum(len(item.gt_masks) for item in items)
    if total_masks == 0:
        raise ValidationError("calibration requires at least one ground-truth mask")
    for item in items:
        for gm in item.gt_masks:
            if (gm.height, gm.width) != (item.heatmap.height, item.heatmap.width):
                raise ValidationError("ground-truth mask does not match its heatmap")

    best: CalibrationResult | None = None
    for t in _candidate_thresholds(items):
        predicted_total = 0
        predicted_hit = 0
        recalled = 0
        for item in items:
            if spec.comparator == "above":
                predicted = item.heatmap.values > t
            else:
                predicted = item.heatmap.values < t
            predicted_total += int(predicted.sum())
            gt_union = np.zeros_like(predicted)
            for gm in item.gt_masks:
                gt_union |= gm.bits
                overlap = int((predicted & gm.bits).sum())
                if overlap >= CALIBRATION_RECALL_OVERLAP * gm.area:
                    recalled += 1
            predicted_hit += int((predicted & gt_union).sum())
        precision = predicted_hit / predicted_total if predicted_total > 0 else 0.0
        recall = recalled / total_masks
        score = precision * recall
        candidate = CalibrationResult(
            threshold=float(t),
            precision=precision,
            recall=recall,
            pr_product=score,
            predicted_pixels=predicted_total,
        )
        if (
            best is None
            or score > best.pr_product
            or (score == best.pr_product and predicted_total < best.predicted_pixels)
        ):
            best = candidate
    assert best is not None
    return best
