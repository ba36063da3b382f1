"""Crowd-vote aggregation: QC filtering, prominence, bootstrap dispersion.

Vote files are JSON lines, one assignment per line:

    {"worker": "w17",
     "controls": [true, true, false, true],
     "responses": [{"question": "q1", "answer": "artifact"}, ...]}

An assignment whose worker missed two or more control questions contributes
no votes; "load-error" answers never count toward a question's vote total.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ArtifactRecord, FormatError, ValidationError

ANSWER_ARTIFACT = "artifact"
ANSWER_NO_ARTIFACT = "no-artifact"
ANSWER_LOAD_ERROR = "load-error"
ANSWERS = (ANSWER_ARTIFACT, ANSWER_NO_ARTIFACT, ANSWER_LOAD_ERROR)

CONTROL_MISTAKE_LIMIT = 2
PROMINENT_CUTOFF = 0.5

QC_SCOPES = ("assignment", "worker")


@dataclass(frozen=True)
class Response:
    question_id: str
    answer: str

    def __post_init__(self) -> None:
        if self.answer not in ANSWERS:
            raise ValidationError(f"unknown answer {self.answer!r}")


@dataclass(frozen=True)
class Assignment:
    """One worker's group of questions with its control-question outcomes."""

    worker_id: str
    responses: tuple[Response, ...]
    control_outcomes: tuple[bool, ...]

    @property
    def control_mistakes(self) -> int:
        return sum(1 for ok in self.control_outcomes if not ok)

    @property
    def passes_qc(self) -> bool:
        return self.control_mistakes < CONTROL_MISTAKE_LIMIT


def read_assignments(path: str | Path) -> list[Assignment]:
    assignments = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            responses = tuple(
                Response(question_id=str(r["question"]), answer=str(r["answer"]))
                for r in row["responses"]
            )
            assignments.append(
                Assignment(
                    worker_id=str(row["worker"]),
                    responses=responses,
                    control_outcomes=tuple(bool(c) for c in row["controls"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
            raise FormatError(f"votes line {lineno}: {exc}") from exc
    return assignments


def qc_filter(assignments: list[Assignment], scope: str = "assignment") -> list[tuple[str, bool]]:
    """Valid (question_id, artifact-present) votes after control filtering.

    ``assignment`` scope discards only the failing 20-question group;
    ``worker`` scope discards every assignment of any worker with a failing
    group.
    """
    if scope not in QC_SCOPES:
        raise ValidationError(f"unknown QC scope {scope!r}")
    if scope == "worker":
        failed = {a.worker_id for a in assignments if not a.passes_qc}
        kept = [a for a in assignments if a.worker_id not in failed]
    else:
        kept = [a for a in assignments if a.passes_qc]
    votes = []
    for a in kept:
        for r in a.responses:
            if r.answer == ANSWER_LOAD_ERROR:
                continue
            votes.append((r.question_id, r.answer == ANSWER_ARTIFACT))
    return votes


def group_votes(votes: list[tuple[str, bool]]) -> dict[str, list[bool]]:
    grouped: dict[str, list[bool]] = defaultdict(list)
    for question_id, positive in votes:
        grouped[question_id].append(positive)
    return dict(grouped)


def prominence(votes: list[bool]) -> float:
    """Fraction of positive votes."""
    if not votes:
        raise ValidationError("prominence is undefined for an empty vote list")
    return sum(votes) / len(votes)


def bootstrap_ci(
    votes: list[bool],
    k: int,
    n: int = 1000,
    level: float = 0.95,
    seed: int | list[int] | None = None,
) -> tuple[float, float]:
    """Percentile confidence interval of prominence at assessor count k.

    Draws k votes with replacement, n times, and returns the percentile
    interval of the resampled prominences. The seed is required so reports
    are reproducible.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"coverage level must be in (0, 1), got {level}")
    if not votes:
        raise ValidationError("cannot bootstrap an empty vote list")
    if seed is None:
        raise ValidationError("a seed is required for reproducible resampling")
    rng = np.random.default_rng(seed)
    arr = np.asarray(votes, dtype=np.float64)
    picks = rng.integers(0, arr.size, size=(n, k))
    proms = arr[picks].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(proms, [alpha, 1.0 - alpha])
    return float(low), float(high)


@dataclass(frozen=True)
class ComponentSummary:
    mask_count: int
    mean_prominence: float | None
    prominent_count: int
    prominent_fraction: float | None

    def to_json(self) -> dict:
        return {
            "mask_count": self.mask_count,
            "mean_prominence": self.mean_prominence,
            "prominent_count": self.prominent_count,
            "prominent_fraction": self.prominent_fraction,
        }


def component_summary(records: list[ArtifactRecord]) -> ComponentSummary:
    """Mask count, mean prominence, and prominent (>= 0.5) share."""
    if not records:
        return ComponentSummary(0, None, 0, None)
    proms = [r.prominence for r in records]
    prominent = sum(1 for p in proms if p >= PROMINENT_CUTOFF)
    return ComponentSummary(
        mask_count=len(records),
        mean_prominence=sum(proms) / len(proms),
        prominent_count=prominent,
        prominent_fraction=prominent / len(records),
    )
