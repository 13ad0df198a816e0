"""Model variants for the three ICU tasks.

    baseline          LSTM over the hourly vitals, task head on h_t
    multimodal_cnn    LSTM fused with convolutional note features
    multimodal_avgwe  LSTM fused with mean-word-embedding note features
    text_only         task head on the note features alone, no LSTM

The mortality task reads the first 48 hours and the notes charted in them,
with one prediction at hour 48 from a single stay-level document. The
sequential tasks predict every hour from t=5, aligning per-note features to
hours via the exponential-decay mean. Fused heads compute
w_series @ h + w_text @ z + b with one shared bias; zeroing w_text makes the
predictions bit-identical to a baseline sharing the series weights.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn
from .data import (
    FIRST_PREDICTION_HOUR,
    IHM_WINDOW_HOURS,
    LOS_CLASSES,
    TASKS,
    EmbeddingTable,
    Episode,
)
from .errors import ParseError, ValidationError
from .nn import ParamStore, Tensor
from .textfeat import avg_word_embedding, concat_notes, decay_coefficients, note_feature_node

VARIANTS = ("baseline", "multimodal_cnn", "multimodal_avgwe", "text_only")

CHECKPOINT_MAGIC = b"ICUPCKPT"


@dataclass(frozen=True)
class ModelConfig:
    task: str
    variant: str
    feature_dim: int
    embedding_dim: int = 200
    lstm_hidden: int = 256
    conv_widths: tuple[int, ...] = (2, 3, 4)
    filters_per_width: int = 256
    decay_lambda: float = 0.01
    dropout: float = 0.2
    weight_decay: float = 0.01

    @classmethod
    def defaults(cls, task: str, variant: str, feature_dim: int,
                 embedding_dim: int = 200, **overrides) -> "ModelConfig":
        """Per-task default sizes: 256 hidden / 256 filters for mortality,
        64 hidden / 128 filters for the sequential tasks."""
        base = dict(lstm_hidden=256, filters_per_width=256) if task == "ihm" \
            else dict(lstm_hidden=64, filters_per_width=128)
        base.update(overrides)
        cfg = cls(task=task, variant=variant, feature_dim=feature_dim,
                  embedding_dim=embedding_dim, **base)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.feature_dim < 1 or self.embedding_dim < 1 or self.lstm_hidden < 1:
            raise ValidationError("feature_dim, embedding_dim, lstm_hidden must be >= 1")
        if self.filters_per_width < 1 or not self.conv_widths:
            raise ValidationError("need at least one conv width and filter")
        if any(w < 1 for w in self.conv_widths) or len(set(self.conv_widths)) != len(self.conv_widths):
            raise ValidationError(f"conv widths must be distinct positive ints, got {self.conv_widths}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.decay_lambda < 0 or self.weight_decay < 0:
            raise ValidationError("decay_lambda and weight_decay must be >= 0")

    @property
    def uses_series(self) -> bool:
        return self.variant != "text_only"

    @property
    def uses_text(self) -> bool:
        return self.variant != "baseline"

    @property
    def uses_conv(self) -> bool:
        return self.variant in ("multimodal_cnn", "text_only")

    @property
    def output_dim(self) -> int:
        return LOS_CLASSES if self.task == "los" else 1

    @property
    def text_feature_dim(self) -> int:
        if self.variant == "multimodal_avgwe":
            return self.embedding_dim
        return len(self.conv_widths) * self.filters_per_width

    def to_json(self) -> dict:
        d = asdict(self)
        d["conv_widths"] = list(self.conv_widths)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        obj["conv_widths"] = tuple(obj["conv_widths"])
        cfg = cls(**obj)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class PredictionSeries:
    """Per-episode predictions: one mortality probability, or per-hour
    probabilities from t=5 (decomp scalars, LOS 10-class distributions)."""

    task: str
    prob: Optional[float] = None
    hourly: Optional[np.ndarray] = None
    start_hour: int = FIRST_PREDICTION_HOUR


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    """Fresh parameters: Glorot-uniform matrices, zero biases, forget bias +1."""
    cfg.validate()
    store = ParamStore()
    h = cfg.lstm_hidden
    if cfg.uses_series:
        store.add("lstm.w_in", _glorot(rng, 4 * h, cfg.feature_dim))
        store.add("lstm.w_rec", _glorot(rng, 4 * h, h))
        bias = np.zeros(4 * h)
        bias[h: 2 * h] = 1.0
        store.add("lstm.bias", bias)
    if cfg.uses_conv:
        for width in cfg.conv_widths:
            store.add(f"conv.w{width}",
                      _glorot(rng, cfg.filters_per_width, width * cfg.embedding_dim))
            store.add(f"conv.b{width}", np.zeros(cfg.filters_per_width))
    out = cfg.output_dim
    if cfg.uses_series:
        store.add("head.w_series", _glorot(rng, out, h))
    if cfg.uses_text:
        store.add("head.w_text", _glorot(rng, out, cfg.text_feature_dim))
    store.add("head.bias", np.zeros(out))
    return store


def conv_banks(store: ParamStore, cfg: ModelConfig) -> list[tuple[int, Tensor, Tensor]]:
    return [(w, store[f"conv.w{w}"], store[f"conv.b{w}"]) for w in cfg.conv_widths]


@dataclass
class BatchResult:
    loss: Optional[Tensor]
    predictions: list[PredictionSeries]
    per_episode_loss: Optional[np.ndarray] = None


def _series_block(episodes: Sequence[Episode], upto: Optional[int]) -> np.ndarray:
    lengths = [ep.num_hours if upto is None else upto for ep in episodes]
    t_max = max(lengths)
    block = np.zeros((t_max, len(episodes), episodes[0].feature_dim))
    for i, ep in enumerate(episodes):
        block[: lengths[i], i, :] = ep.timeseries[: lengths[i]]
    return block


def _ihm_text_nodes(episodes, store, cfg, table) -> Tensor:
    feats = []
    for ep in episodes:
        visible = [n for n in ep.notes if n.chart_time <= IHM_WINDOW_HOURS]
        if not visible:
            raise ValidationError(
                f"episode {ep.patient_id}: no note charted within the first 48h")
        doc = concat_notes(visible)
        if cfg.variant == "multimodal_avgwe":
            feats.append(nn.constant(avg_word_embedding(doc, table)))
        else:
            feats.append(note_feature_node(doc, table, conv_banks(store, cfg)))
    return nn.stack_rows(feats)


def _seq_text_nodes(episodes, store, cfg, table, pred_len: int) -> Tensor:
    """Hourly text features for t=5..T as a (pred_len, B, p) tensor."""
    per_episode = []
    banks = conv_banks(store, cfg) if cfg.uses_conv else None
    for ep in episodes:
        hours = range(FIRST_PREDICTION_HOUR, ep.num_hours + 1)
        coeffs = decay_coefficients([n.chart_time for n in ep.notes], hours,
                                    cfg.decay_lambda)
        if cfg.variant == "multimodal_avgwe":
            stacked = np.stack([avg_word_embedding(n, table) for n in ep.notes])
            per_episode.append(nn.constant(coeffs @ stacked))
        else:
            notes = nn.stack_rows([note_feature_node(n, table, banks) for n in ep.notes])
            per_episode.append(nn.const_matmul(coeffs, notes))
    return nn.pad_time_stack(per_episode, pred_len)


def batch_forward(episodes: Sequence[Episode], store: ParamStore, cfg: ModelConfig,
                  table: Optional[EmbeddingTable] = None, training: bool = False,
                  rng: Optional[np.random.Generator] = None,
                  with_loss: bool = True) -> BatchResult:
    """Forward pass over a batch of episodes, optionally with the training loss.

    Batches pad to the longest stay; padded and pre-t=5 hours carry zero loss
    weight. The batch loss is the mean over episodes of the per-episode loss.
    """
    if not episodes:
        raise ValidationError("batch_forward needs at least one episode")
    cfg.validate()
    if cfg.uses_text and table is None:
        raise ValidationError(f"variant {cfg.variant!r} needs an embedding table")
    if cfg.uses_text and table is not None and table.dim != cfg.embedding_dim:
        raise ValidationError(
            f"embedding table dim {table.dim} != configured embedding_dim {cfg.embedding_dim}")
    for ep in episodes:
        if ep.feature_dim != cfg.feature_dim:
            raise ValidationError(
                f"episode {ep.patient_id} has {ep.feature_dim} features, "
                f"config expects {cfg.feature_dim}")

    batch = len(episodes)
    drop = lambda x: nn.dropout(x, cfg.dropout, training, rng)

    if cfg.task == "ihm":
        for ep in episodes:
            if ep.num_hours < IHM_WINDOW_HOURS:
                raise ValidationError(
                    f"episode {ep.patient_id}: stay shorter than 48h (T={ep.num_hours})")
        logits = None
        if cfg.uses_series:
            hs = nn.lstm_sequence(_series_block(episodes, IHM_WINDOW_HOURS),
                                  store["lstm.w_in"], store["lstm.w_rec"], store["lstm.bias"])
            h_last = nn.reshape(nn.slice_rows(hs, IHM_WINDOW_HOURS - 1, IHM_WINDOW_HOURS),
                                (batch, cfg.lstm_hidden))
            logits = nn.dense(drop(h_last), store["head.w_series"], store["head.bias"])
        if cfg.uses_text:
            z = drop(_ihm_text_nodes(episodes, store, cfg, table))
            if logits is None:
                logits = nn.dense(z, store["head.w_text"], store["head.bias"])
            else:
                logits = nn.add(logits, nn.dense(z, store["head.w_text"]))
        flat = nn.reshape(logits, (batch,))
        probs = nn.sigmoid_np(flat.data)
        preds = [PredictionSeries(task="ihm", prob=float(probs[i])) for i in range(batch)]
        loss = None
        per_ep = None
        if with_loss:
            missing = [ep.patient_id for ep in episodes if ep.labels.mortality is None]
            if missing:
                raise ValidationError(f"mortality label missing for {missing[0]!r}")
            labels = np.array([ep.labels.mortality for ep in episodes], dtype=np.float64)
            loss = nn.binary_ce_logits(flat, labels, np.full(batch, 1.0 / batch))
            per_ep = np.array([nn.binary_ce(probs[i], int(labels[i])) for i in range(batch)])
        return BatchResult(loss=loss, predictions=preds, per_episode_loss=per_ep)

    # Sequential tasks: logits for hours t=5..T_max, time-major.
    pred_lens = [ep.num_predicted_hours for ep in episodes]
    if min(pred_lens) == 0:
        bad = episodes[pred_lens.index(0)]
        raise ValidationError(f"episode {bad.patient_id}: no predictable hours")
    pred_len = max(pred_lens)
    out_dim = cfg.output_dim
    logits = None
    if cfg.uses_series:
        hs = nn.lstm_sequence(_series_block(episodes, None), store["lstm.w_in"],
                              store["lstm.w_rec"], store["lstm.bias"])
        hp = nn.reshape(nn.slice_rows(hs, FIRST_PREDICTION_HOUR - 1, pred_len
                                      + FIRST_PREDICTION_HOUR - 1),
                        (pred_len * batch, cfg.lstm_hidden))
        logits = nn.dense(drop(hp), store["head.w_series"], store["head.bias"])
    if cfg.uses_text:
        z = drop(_seq_text_nodes(episodes, store, cfg, table, pred_len))
        z_flat = nn.reshape(z, (pred_len * batch, cfg.text_feature_dim))
        if logits is None:
            logits = nn.dense(z_flat, store["head.w_text"], store["head.bias"])
        else:
            logits = nn.add(logits, nn.dense(z_flat, store["head.w_text"]))

    valid = np.zeros((pred_len, batch))
    for i, n in enumerate(pred_lens):
        valid[:n, i] = 1.0
    weights = (valid / np.array(pred_lens, dtype=np.float64)[None, :] / batch).reshape(-1)

    if cfg.task == "decomp":
        flat = nn.reshape(logits, (pred_len * batch,))
        probs = nn.sigmoid_np(flat.data).reshape(pred_len, batch)
        preds = [PredictionSeries(task="decomp", hourly=probs[: pred_lens[i], i].copy())
                 for i in range(batch)]
        loss = None
        per_ep = None
        if with_loss:
            labels = np.zeros((pred_len, batch))
            for i, ep in enumerate(episodes):
                labels[: pred_lens[i], i] = ep.labels.decompensation
            loss = nn.binary_ce_logits(flat, labels.reshape(-1), weights)
            per_ep = _per_episode_binary_loss(probs, labels, valid, pred_lens)
        return BatchResult(loss=loss, predictions=preds, per_episode_loss=per_ep)

    # LOS
    probs = nn.softmax_np(logits.data, axis=1).reshape(pred_len, batch, out_dim)
    preds = [PredictionSeries(task="los", hourly=probs[: pred_lens[i], i, :].copy())
             for i in range(batch)]
    loss = None
    per_ep = None
    if with_loss:
        labels = np.zeros((pred_len, batch), dtype=np.int64)
        for i, ep in enumerate(episodes):
            if ep.labels.los_buckets is None:
                raise ValidationError(
                    f"episode {ep.patient_id} has no length-of-stay labels")
            labels[: pred_lens[i], i] = ep.labels.los_buckets
        loss = nn.softmax_ce_logits(logits, labels.reshape(-1), weights)
        per_ep = _per_episode_multiclass_loss(probs, labels, valid, pred_lens)
    return BatchResult(loss=loss, predictions=preds, per_episode_loss=per_ep)


def _per_episode_binary_loss(probs, labels, valid, pred_lens):
    p = nn.clamp_probs(probs)
    ce = -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)) * valid
    return ce.sum(axis=0) / np.array(pred_lens, dtype=np.float64)


def _per_episode_multiclass_loss(probs, labels, valid, pred_lens):
    pred_len, batch, _ = probs.shape
    picked = probs[np.arange(pred_len)[:, None], np.arange(batch)[None, :], labels]
    ce = -np.log(nn.clamp_probs(picked)) * valid
    return ce.sum(axis=0) / np.array(pred_lens, dtype=np.float64)


def forward_episode(episode: Episode, store: ParamStore, cfg: ModelConfig,
                    table: Optional[EmbeddingTable] = None) -> PredictionSeries:
    """Inference-mode predictions for a single episode."""
    return batch_forward([episode], store, cfg, table, with_loss=False).predictions[0]


def baseline_forward(episode: Episode, store: ParamStore, cfg: ModelConfig) -> PredictionSeries:
    if cfg.variant != "baseline":
        raise ValidationError(f"baseline_forward got variant {cfg.variant!r}")
    return forward_episode(episode, store, cfg)


def ihm_multimodal_forward(episode: Episode, store: ParamStore, cfg: ModelConfig,
                           table: EmbeddingTable) -> float:
    if cfg.task != "ihm" or cfg.variant not in ("multimodal_cnn", "multimodal_avgwe"):
        raise ValidationError(
            f"ihm_multimodal_forward got task {cfg.task!r} variant {cfg.variant!r}")
    return float(forward_episode(episode, store, cfg, table).prob)


def seq_multimodal_forward(episode: Episode, store: ParamStore, cfg: ModelConfig,
                           table: EmbeddingTable) -> PredictionSeries:
    if cfg.task not in ("decomp", "los") or cfg.variant not in ("multimodal_cnn",
                                                                "multimodal_avgwe"):
        raise ValidationError(
            f"seq_multimodal_forward got task {cfg.task!r} variant {cfg.variant!r}")
    return forward_episode(episode, store, cfg, table)


def text_only_forward(episode: Episode, store: ParamStore, cfg: ModelConfig,
                      table: EmbeddingTable) -> PredictionSeries:
    if cfg.variant != "text_only":
        raise ValidationError(f"text_only_forward got variant {cfg.variant!r}")
    return forward_episode(episode, store, cfg, table)


def compute_loss(prediction: PredictionSeries, episode: Episode, task: str) -> float:
    """Value of the task loss for one episode's predictions.

    Mortality: single cross entropy. Sequential tasks: mean cross entropy
    over the predicted hours t=5..T.
    """
    labels = episode.labels
    if task == "ihm":
        if labels.mortality is None:
            raise ValidationError("mortality label missing")
        return nn.binary_ce(prediction.prob, labels.mortality)
    if task == "decomp":
        hourly = prediction.hourly
        if hourly.shape[0] != len(labels.decompensation):
            raise RuntimeError(
                f"got {hourly.shape[0]} predictions for {len(labels.decompensation)} labels")
        return float(np.mean([nn.binary_ce(p, y)
                              for p, y in zip(hourly, labels.decompensation)]))
    if task == "los":
        if labels.los_buckets is None:
            raise ValidationError("length-of-stay labels missing")
        hourly = prediction.hourly
        if hourly.shape[0] != len(labels.los_buckets):
            raise RuntimeError(
                f"got {hourly.shape[0]} predictions for {len(labels.los_buckets)} labels")
        return float(np.mean([nn.multiclass_ce(p, y)
                              for p, y in zip(hourly, labels.los_buckets)]))
    raise ValidationError(f"unknown task {task!r}")


def save_checkpoint(path: str | Path, cfg: ModelConfig, store: ParamStore) -> None:
    """Write parameters as raw little-endian float64 with a JSON header."""
    header = {
        "config": cfg.to_json(),
        "params": [{"name": name, "shape": list(t.data.shape)} for name, t in store.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for _, t in store.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ParamStore]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ParseError("not a checkpoint file (bad magic)", path=path)
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    try:
        header = json.loads(blob[offset: offset + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"corrupt checkpoint header: {exc}", path=path) from None
    offset += header_len
    cfg = ModelConfig.from_json(header["config"])
    store = ParamStore()
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 8
        if end > len(blob):
            raise ParseError("checkpoint payload truncated", path=path)
        arr = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape)
        store.add(spec["name"], arr)
        offset = end
    if offset != len(blob):
        raise ParseError("checkpoint has trailing bytes", path=path)
    return cfg, store
