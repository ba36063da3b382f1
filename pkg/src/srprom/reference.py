"""Reference-image selection for full-reference providers.

Each dataset component declares how a reference is obtained: the original HR
image, a user-supplied lightweight-SR pseudo-GT file, or a bicubic upscale of
the LR input. Components without HR ground truth cannot use original-hr.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .model import ArtifactRecord, FormatError, ImageBuffer, ValidationError, read_image
from .raster import resize
from .scoring import UndefinedCorrelation, average_ranks

REFERENCE_MODES = ("original-hr", "pseudo-gt-file", "bicubic-fallback")


@dataclass(frozen=True)
class ReferenceConfig:
    """Per-component reference mode and path templates.

    Templates may use {source} and {sr} placeholders. ``has_original_hr``
    must be false for components with no HR ground truth.
    """

    mode: str
    hr_template: str | None = None
    pseudo_template: str | None = None
    lr_template: str | None = None
    has_original_hr: bool = True

    def __post_init__(self) -> None:
        if self.mode not in REFERENCE_MODES:
            raise ValidationError(f"unknown reference mode {self.mode!r}")
        if self.mode == "original-hr":
            if not self.has_original_hr:
                raise ValidationError(
                    "original-hr requested for a component with no HR ground truth"
                )
            if not self.hr_template:
                raise ValidationError("original-hr mode needs hr_template")
        if self.mode == "pseudo-gt-file" and not self.pseudo_template:
            raise ValidationError("pseudo-gt-file mode needs pseudo_template")
        if self.mode == "bicubic-fallback" and not self.lr_template:
            raise ValidationError("bicubic-fallback mode needs lr_template")


def load_reference_config(path: str | Path) -> dict[str, ReferenceConfig]:
    """JSON mapping component -> {mode, templates, has_original_hr}."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"reference config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError("reference config must be a JSON object keyed by component")
    config = {}
    for component, row in data.items():
        try:
            config[component] = ReferenceConfig(
                mode=str(row["mode"]),
                hr_template=row.get("hr_template"),
                pseudo_template=row.get("pseudo_template"),
                lr_template=row.get("lr_template"),
                has_original_hr=bool(row.get("has_original_hr", True)),
            )
        except (KeyError, TypeError, ValidationError) as exc:
            raise FormatError(f"reference config for {component!r}: {exc}") from exc
    return config


class ReferenceResolver:
    """Resolves and caches reference images per (record, mode, size)."""

    def __init__(self, config: dict[str, ReferenceConfig], base_dir: str | Path = "."):
        self.config = config
        self.base_dir = Path(base_dir)
        self._cache: dict[tuple, ImageBuffer] = {}

    def resolve(self, record: ArtifactRecord, sr_size: tuple[int, int]) -> ImageBuffer:
        """Reference image for the record, bicubic-resized to the SR size."""
        if record.component_id not in self.config:
            raise ValidationError(f"no reference config for component {record.component_id!r}")
        cfg = self.config[record.component_id]
        key = (record.component_id, record.source_image_id, cfg.mode, sr_size)
        if key in self._cache:
            return self._cache[key]
        template = {
            "original-hr": cfg.hr_template,
            "pseudo-gt-file": cfg.pseudo_template,
            "bicubic-fallback": cfg.lr_template,
        }[cfg.mode]
        assert template is not None
        path = self.base_dir / template.format(
            source=record.source_image_id, sr=record.sr_method_id
        )
        if not path.exists():
            raise ValidationError(f"reference image missing: {path}")
        image = read_image(path)
        if (image.width, image.height) != sr_size:
            image = resize(image, sr_size[0], sr_size[1], mode="bicubic")
        self._cache[key] = image
        return image


def resolve_reference(
    record: ArtifactRecord,
    config: dict[str, ReferenceConfig],
    sr_size: tuple[int, int],
    base_dir: str | Path = ".",
) -> ImageBuffer:
    return ReferenceResolver(config, base_dir).resolve(record, sr_size)


@dataclass(frozen=True)
class ReferenceDelta:
    provider: str
    score_primary: float
    score_pseudo: float
    delta: float
    rank_primary: float
    rank_pseudo: float
    rank_delta: float

    def to_json(self) -> dict:
        return {
            "provider": self.provider,
            "score_primary": self.score_primary,
            "score_pseudo": self.score_pseudo,
            "delta": self.delta,
            "rank_primary": self.rank_primary,
            "rank_pseudo": self.rank_pseudo,
            "rank_delta": self.rank_delta,
        }


def compare_reference_runs(
    scores_primary: dict[str, float], scores_pseudo: dict[str, float]
) -> list[ReferenceDelta]:
    """Paired per-provider score deltas and rank changes across references.

    Ranks are 1 = best (highest score), with ties averaged.
    """
    if set(scores_primary) != set(scores_pseudo):
        raise ValidationError(
            f"provider sets differ: {sorted(set(scores_primary) ^ set(scores_pseudo))}"
        )
    if not scores_primary:
        raise UndefinedCorrelation("no providers to compare")
    providers = sorted(scores_primary)
    primary = [scores_primary[p] for p in providers]
    pseudo = [scores_pseudo[p] for p in providers]
    # descending scores -> rank 1 is best
    n = len(providers)
    rank_primary = n + 1 - average_ranks(primary)
    rank_pseudo = n + 1 - average_ranks(pseudo)
    return [
        ReferenceDelta(
            provider=p,
            score_primary=primary[i],
            score_pseudo=pseudo[i],
            delta=pseudo[i] - primary[i],
            rank_primary=float(rank_primary[i]),
            rank_pseudo=float(rank_pseudo[i]),
            rank_delta=float(rank_pseudo[i] - rank_primary[i]),
        )
        for i, p in enumerate(providers)
    ]
