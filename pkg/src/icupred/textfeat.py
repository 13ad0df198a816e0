"""Note feature extraction and time-decayed alignment to hourly predictions.

A note charted at hour ct contributes to predictions at hours t >= ct with
weight exp(-lambda * (t - ct)). The hourly feature is the decayed MEAN over
the M notes visible so far (divide by M, not by the weight sum), so a lone
stale note attenuates toward zero instead of renormalising.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ClinicalNote, EmbeddingTable
from .errors import ValidationError
from .nn import Tensor, conv1d_maxpool

__all__ = [
    "DecayConfig",
    "NoteFeature",
    "aggregate_note_features",
    "avg_word_embedding",
    "concat_notes",
    "decay_coefficients",
    "decay_weight",
    "extract_note_feature",
    "note_feature_node",
    "pad_token_ids",
]


@dataclass(frozen=True)
class DecayConfig:
    """Exponential decay rate for aligning notes to prediction hours."""

    decay_lambda: float

    def __post_init__(self):
        if self.decay_lambda < 0:
            raise ValidationError(f"decay lambda must be >= 0, got {self.decay_lambda}")


@dataclass(frozen=True)
class NoteFeature:
    """Fixed-size feature vector for one note, tagged with its chart hour."""

    chart_time: int
    vector: np.ndarray


def pad_token_ids(token_ids: Sequence[int], min_length: int) -> tuple[int, ...]:
    """Right-pad with the reserved index 0 so convolutions are total."""
    ids = tuple(token_ids)
    if len(ids) >= min_length:
        return ids
    return ids + (0,) * (min_length - len(ids))


def note_feature_node(note: ClinicalNote, table: EmbeddingTable,
                      banks: Sequence[tuple[int, Tensor, Tensor]]) -> Tensor:
    """Graph node for a note's convolutional features; embeddings stay frozen."""
    max_width = max(width for width, _, _ in banks)
    ids = pad_token_ids(note.token_ids, max_width)
    return conv1d_maxpool(table.lookup(ids), banks)


def extract_note_feature(note: ClinicalNote, table: EmbeddingTable,
                         banks: Sequence[tuple[int, Tensor, Tensor]]) -> NoteFeature:
    """Convolutional feature vector for one note (detached from the graph)."""
    node = note_feature_node(note, table, banks)
    return NoteFeature(chart_time=note.chart_time, vector=node.data.copy())


def concat_notes(notes: Sequence[ClinicalNote]) -> ClinicalNote:
    """Join token sequences in chart-time order into one stay-level note."""
    if not notes:
        raise ValidationError("concat_notes needs at least one note")
    ordered = sorted(notes, key=lambda n: n.chart_time)
    tokens: list[int] = []
    for note in ordered:
        tokens.extend(note.token_ids)
    return ClinicalNote(chart_time=ordered[0].chart_time, token_ids=tuple(tokens))


def decay_weight(t: float, chart_time: float, decay_lambda: float) -> float:
    """exp(-lambda * (t - chart_time)); future notes are invisible."""
    if chart_time > t:
        raise ValidationError(
            f"note charted at {chart_time} lies after prediction hour {t}")
    if decay_lambda < 0:
        raise ValidationError(f"decay lambda must be >= 0, got {decay_lambda}")
    return float(np.exp(-decay_lambda * (t - chart_time)))


def decay_coefficients(chart_times: Sequence[int], hours: Sequence[int],
                       decay_lambda: float) -> np.ndarray:
    """Coefficient matrix C with C[j, i] = w(hours[j], i) / M_j for visible notes.

    Row j reconstructs the hourly feature at hours[j] as C[j] @ stacked note
    features; rows where no note is visible yet are all zero.
    """
    if decay_lambda < 0:
        raise ValidationError(f"decay lambda must be >= 0, got {decay_lambda}")
    cts = np.asarray(chart_times, dtype=np.float64)
    ts = np.asarray(hours, dtype=np.float64)[:, None]
    visible = cts[None, :] <= ts
    coeffs = np.where(visible, np.exp(-decay_lambda * (ts - cts[None, :])), 0.0)
    counts = visible.sum(axis=1)
    nonzero = counts > 0
    coeffs[nonzero] /= counts[nonzero, None]
    return coeffs


def aggregate_note_features(features: Sequence[NoteFeature], t: int,
                            decay_lambda: float) -> np.ndarray:
    """Decayed mean of the note features visible at hour ``t``.

    With no visible notes the result is the zero vector, so downstream heads
    degrade gracefully to the time-series path.
    """
    if not features:
        raise ValidationError("aggregate_note_features needs the episode's note features")
    dim = features[0].vector.shape[0]
    coeffs = decay_coefficients([f.chart_time for f in features], [t], decay_lambda)[0]
    out = np.zeros(dim)
    for c, feat in zip(coeffs, features):
        if c != 0.0:
            out += c * feat.vector
    return out


def avg_word_embedding(note: ClinicalNote, table: EmbeddingTable) -> np.ndarray:
    """Arithmetic mean of token embeddings; OOV tokens count in the denominator."""
    if not note.token_ids:
        return np.zeros(table.dim)
    return table.lookup(note.token_ids).mean(axis=0)
