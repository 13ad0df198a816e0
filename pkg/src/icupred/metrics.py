"""Evaluation metrics: AUROC, average-precision AUCPR, linear weighted kappa,
confusion matrices, and multi-seed aggregation. All functions are pure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import UndefinedMetricError, ValidationError


@dataclass(frozen=True)
class ScoredSet:
    """Parallel model scores and reference labels for one evaluation pool."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValidationError(
                f"scores {self.scores.shape} and labels {self.labels.shape} "
                "must be equal-length vectors")


@dataclass(frozen=True)
class MetricsReport:
    """Per-seed metric values with mean and sample standard deviation (n-1)."""

    values: tuple[float, ...]
    mean: float
    std: Optional[float]

    def to_json(self) -> dict:
        return {"seeds": list(self.values), "mean": self.mean, "std": self.std}


def _as_scored(scores, labels) -> ScoredSet:
    return ScoredSet(np.asarray(scores, dtype=np.float64),
                     np.asarray(labels, dtype=np.float64))


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative.

    Ties count one half (Mann-Whitney). Needs both classes present.
    """
    s = _as_scored(scores, labels)
    pos = s.labels == 1
    n_pos = int(pos.sum())
    n_neg = s.labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC undefined with {n_pos} positives and {n_neg} negatives")
    # Midranks handle ties exactly: U = sum of positive ranks - P(P+1)/2.
    order = np.argsort(s.scores, kind="mergesort")
    sorted_scores = s.scores[order]
    ranks = np.empty_like(sorted_scores)
    i = 0
    n = sorted_scores.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[i: j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = ranks[pos[order]].sum()
    u = pos_rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aucpr(scores, labels) -> float:
    """Average precision with equal scores processed as one threshold group."""
    s = _as_scored(scores, labels)
    n_pos = int((s.labels == 1).sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUCPR undefined with zero positives")
    order = np.argsort(-s.scores, kind="mergesort")
    sorted_scores = s.scores[order]
    sorted_labels = s.labels[order]
    total = 0.0
    tp = 0
    seen = 0
    i = 0
    n = sorted_scores.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        group_pos = float(sorted_labels[i: j + 1].sum())
        tp += group_pos
        seen += j - i + 1
        if group_pos > 0:
            total += (tp / seen) * (group_pos / n_pos)
        i = j + 1
    return float(total)


def confusion_matrix(true_classes, pred_classes, num_classes: int) -> np.ndarray:
    t = np.asarray(true_classes, dtype=np.int64)
    p = np.asarray(pred_classes, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1 or t.shape[0] == 0:
        raise ValidationError("true and predicted class sequences must be equal-length, nonempty")
    if t.min() < 0 or t.max() >= num_classes or p.min() < 0 or p.max() >= num_classes:
        raise ValidationError(f"classes must lie in [0, {num_classes})")
    out = np.zeros((num_classes, num_classes), dtype=np.float64)
    np.add.at(out, (t, p), 1.0)
    return out


def linear_weighted_kappa(true_classes, pred_classes, num_classes: int) -> float:
    """Chance-corrected agreement with disagreement weights |i-j|/(C-1)."""
    observed = confusion_matrix(true_classes, pred_classes, num_classes)
    n = observed.sum()
    idx = np.arange(num_classes, dtype=np.float64)
    weights = np.abs(idx[:, None] - idx[None, :]) / (num_classes - 1)
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n
    denom = float((weights * expected).sum())
    if denom == 0.0:
        raise UndefinedMetricError("kappa undefined: degenerate marginals")
    return float(1.0 - (weights * observed).sum() / denom)


def aggregate_seeds(values: Sequence[float]) -> MetricsReport:
    """Mean and sample standard deviation across per-seed metric values."""
    vals = tuple(float(v) for v in values)
    if not vals:
        raise ValidationError("aggregate_seeds needs at least one value")
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
    return MetricsReport(values=vals, mean=mean, std=std)
