"""Canonical ICU episode representation, task labels, and the embedding table.

Hours are 1-indexed: t=1 is the first hour of the stay. Sequential tasks
predict from t=5 onward. All objects here are immutable after construction
and freely shareable across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError

TASKS = ("ihm", "decomp", "los")
IHM_WINDOW_HOURS = 48
FIRST_PREDICTION_HOUR = 5
LOS_CLASSES = 10
HOURS_PER_DAY = 24


@dataclass(frozen=True)
class ClinicalNote:
    """One charted note: integer chart hour plus vocabulary token ids."""

    chart_time: int
    token_ids: tuple[int, ...]


@dataclass(frozen=True)
class EpisodeLabels:
    """Task labels for one stay.

    ``decompensation`` and ``los_buckets`` cover t=5..T (length max(0, T-4));
    ``los_buckets`` is None for stays that end in an in-ICU death, and
    ``mortality`` is None when the stay is shorter than 48 hours.
    """

    mortality: Optional[int]
    death_hour: Optional[int]
    decompensation: tuple[int, ...]
    los_buckets: Optional[tuple[int, ...]]


@dataclass(frozen=True)
class Episode:
    """One ICU stay: hourly feature matrix, charted notes, and task labels."""

    patient_id: str
    timeseries: np.ndarray  # (T, D) float64, fully imputed
    notes: tuple[ClinicalNote, ...]
    labels: EpisodeLabels

    @property
    def num_hours(self) -> int:
        return self.timeseries.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.timeseries.shape[1]

    @property
    def num_predicted_hours(self) -> int:
        return max(0, self.num_hours - (FIRST_PREDICTION_HOUR - 1))


@dataclass(frozen=True)
class EmbeddingTable:
    """Frozen token embedding matrix; index 0 is reserved for OOV/pad and is all-zero."""

    vocab: dict[str, int]
    vectors: np.ndarray  # (V, E)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, token_ids: Sequence[int]) -> np.ndarray:
        return self.vectors[np.asarray(token_ids, dtype=np.int64)]


def bucketize_los(remaining_hours: float) -> int:
    """Map remaining stay time to one of 10 buckets.

    Buckets 0..7 cover one day each ([b, b+1) days), bucket 8 covers
    [8, 14) days, bucket 9 is 14 days and beyond.
    """
    if remaining_hours < 0:
        raise ValidationError(f"remaining_hours must be >= 0, got {remaining_hours}")
    days = remaining_hours / HOURS_PER_DAY
    if days < 8:
        return int(days)
    if days < 14:
        return 8
    return 9


def derive_hourly_labels(total_stay_hours: int, death_hour: Optional[int]) -> tuple[
        tuple[int, ...], Optional[tuple[int, ...]]]:
    """Expand stay-level outcomes into per-hour labels for t=5..T.

    Decompensation at hour t is 1 iff the patient dies in ICU within
    (t, t+24]. LOS buckets discretise the remaining stay T-t and are absent
    for in-ICU deaths.
    """
    hours = range(FIRST_PREDICTION_HOUR, total_stay_hours + 1)
    if death_hour is None:
        decomp = tuple(0 for _ in hours)
        los = tuple(bucketize_los(total_stay_hours - t) for t in hours)
        return decomp, los
    decomp = tuple(int(t < death_hour <= t + HOURS_PER_DAY) for t in hours)
    return decomp, None


def validate_episode(episode: Episode, task: Optional[str] = None) -> list[str]:
    """Check episode invariants, plus task-specific ones when ``task`` is given.

    Returns a list of violation messages; empty means valid. Never raises
    on bad data.
    """
    if task is not None and task not in TASKS:
        raise ValidationError(f"unknown task {task!r}; expected one of {TASKS}")
    violations: list[str] = []
    ts = episode.timeseries
    if ts.ndim != 2 or ts.shape[0] < 1:
        violations.append(f"timeseries must be (T>=1, D), got shape {ts.shape}")
        return violations
    t_total = ts.shape[0]
    if not np.all(np.isfinite(ts)):
        violations.append("timeseries contains non-finite values")

    if not episode.notes:
        violations.append("patient without notes")
    prev_ct = 0
    for note in episode.notes:
        if not 1 <= note.chart_time <= t_total:
            violations.append(
                f"note chart time {note.chart_time} outside stay hours [1, {t_total}]")
        if note.chart_time < prev_ct:
            violations.append("notes not sorted by chart time")
        prev_ct = note.chart_time

    labels = episode.labels
    expected = max(0, t_total - (FIRST_PREDICTION_HOUR - 1))
    if len(labels.decompensation) != expected:
        violations.append(
            f"decompensation labels cover {len(labels.decompensation)} hours, expected {expected}")
    if labels.los_buckets is not None and len(labels.los_buckets) != expected:
        violations.append(
            f"los labels cover {len(labels.los_buckets)} hours, expected {expected}")
    if labels.death_hour is not None:
        if not 1 <= labels.death_hour <= t_total:
            violations.append(f"death hour {labels.death_hour} outside stay [1, {t_total}]")
        if labels.mortality != 1:
            violations.append("death hour set but mortality label is not 1")
        if labels.los_buckets is not None:
            violations.append("in-ICU death episode carries los labels")
    if labels.mortality is not None and labels.mortality not in (0, 1):
        violations.append(f"mortality label must be 0 or 1, got {labels.mortality!r}")

    if task == "ihm":
        if t_total < IHM_WINDOW_HOURS:
            violations.append(f"stay shorter than 48h (T={t_total})")
        if labels.mortality is None:
            violations.append("mortality label missing")
        if episode.notes and not any(n.chart_time <= IHM_WINDOW_HOURS for n in episode.notes):
            violations.append("no note charted within the first 48h")
    elif task in ("decomp", "los"):
        if expected == 0:
            violations.append(f"no predictable hours (T={t_total} < {FIRST_PREDICTION_HOUR})")
        if task == "los" and labels.los_buckets is None:
            violations.append("in-ICU death episode excluded from length-of-stay")
    return violations
