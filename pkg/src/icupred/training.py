"""Mini-batch training loop, validation-based model selection, and the
multi-seed experiment runner.

One training loop owns its parameter store; everything is driven by the run
seed, so (seed, config, data) fixes every reported number exactly.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Episode, EmbeddingTable
from .errors import TrainingError, ValidationError
from .ingestion import DatasetSplits
from .metrics import MetricsReport, aggregate_seeds, aucpr, auroc, linear_weighted_kappa
from .models import (
    LOS_CLASSES,
    ModelConfig,
    ParamStore,
    batch_forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .nn import adam_update, clip_grad_norm

log = logging.getLogger(__name__)

TASK_METRICS = {"ihm": ("auroc", "aucpr"), "decomp": ("auroc", "aucpr"), "los": ("kappa",)}
SELECTION_METRIC = {"ihm": "aucpr", "decomp": "aucpr", "los": "kappa"}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    grad_clip: float = 5.0
    selection_metric: Optional[str] = None  # default: aucpr (ihm/decomp), kappa (los)

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.seeds:
            raise ValidationError("need at least one seed")

    def metric_for(self, task: str) -> str:
        return self.selection_metric or SELECTION_METRIC[task]


@dataclass
class RunRecord:
    """Everything one training run reports."""

    task: str
    variant: str
    seed: int
    epoch_train_loss: list[float] = field(default_factory=list)
    epoch_val_metric: list[float] = field(default_factory=list)
    selection_metric: str = ""
    selected_epoch: int = -1
    checkpoint: Optional[str] = None
    test_metrics: dict[str, float] = field(default_factory=dict)
    model_config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "variant": self.variant,
            "seed": self.seed,
            "epoch_train_loss": self.epoch_train_loss,
            "epoch_val_metric": self.epoch_val_metric,
            "selection_metric": self.selection_metric,
            "selected_epoch": self.selected_epoch,
            "checkpoint": self.checkpoint,
            "test_metrics": self.test_metrics,
            "model_config": self.model_config,
        }


def pooled_scores(episodes: Sequence[Episode], predictions) -> tuple[np.ndarray, np.ndarray]:
    """Pool per-episode predictions into one scored set for the task metrics."""
    scores: list[float] = []
    labels: list[float] = []
    for ep, pred in zip(episodes, predictions):
        if pred.task == "ihm":
            scores.append(pred.prob)
            labels.append(ep.labels.mortality)
        elif pred.task == "decomp":
            scores.extend(pred.hourly.tolist())
            labels.extend(ep.labels.decompensation)
        else:
            scores.extend(np.argmax(pred.hourly, axis=1).tolist())
            labels.extend(ep.labels.los_buckets)
    return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=np.float64)


def evaluate(store: ParamStore, cfg: ModelConfig, episodes: Sequence[Episode],
             table: Optional[EmbeddingTable], batch_size: int = 32) -> dict[str, float]:
    """Pooled task metrics over a split, dropout off."""
    if not episodes:
        raise ValidationError("evaluate needs a nonempty split")
    predictions = []
    for start in range(0, len(episodes), batch_size):
        chunk = episodes[start: start + batch_size]
        predictions.extend(batch_forward(chunk, store, cfg, table, with_loss=False).predictions)
    scores, labels = pooled_scores(episodes, predictions)
    if cfg.task == "los":
        return {"kappa": linear_weighted_kappa(labels.astype(int), scores.astype(int),
                                               LOS_CLASSES)}
    return {"auroc": auroc(scores, labels), "aucpr": aucpr(scores, labels)}


def evaluate_checkpoint(checkpoint_path: str | Path, data: DatasetSplits,
                        split: str = "test", task: Optional[str] = None) -> dict[str, float]:
    cfg, store = load_checkpoint(checkpoint_path)
    if task is not None and task != cfg.task:
        raise ValidationError(
            f"checkpoint was trained for task {cfg.task!r}, not {task!r}")
    if data.task != cfg.task:
        raise ValidationError(
            f"dataset was loaded for task {data.task!r}, checkpoint is {cfg.task!r}")
    return evaluate(store, cfg, data.split(split), data.table)


def train(model_cfg: ModelConfig, data: DatasetSplits, train_cfg: TrainConfig, seed: int,
          out_dir: Optional[str | Path] = None) -> tuple[RunRecord, ParamStore]:
    """Train one model, selecting the epoch with the best validation metric.

    Returns the run record and a store holding the selected parameters.
    Raises TrainingError with diagnostics if the loss goes non-finite.
    """
    model_cfg.validate()
    train_cfg.validate()
    if data.task != model_cfg.task:
        raise ValidationError(f"dataset task {data.task!r} != model task {model_cfg.task!r}")
    if not data.train:
        raise ValidationError("training split is empty")
    if not data.val:
        raise ValidationError("validation split is empty")

    rng = np.random.default_rng(seed)
    store = init_params(model_cfg, rng)
    table = data.table if model_cfg.uses_text else None
    metric_name = train_cfg.metric_for(model_cfg.task)
    record = RunRecord(task=model_cfg.task, variant=model_cfg.variant, seed=seed,
                       selection_metric=metric_name, model_config=model_cfg.to_json())

    episodes = list(data.train)
    best_value = -np.inf
    best_snapshot = None
    started = time.monotonic()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(episodes))
        loss_sum = 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [episodes[i] for i in order[start: start + train_cfg.batch_size]]
            result = batch_forward(batch, store, model_cfg, table, training=True, rng=rng)
            loss_val = result.loss.item()
            if not np.isfinite(loss_val):
                raise TrainingError(
                    f"non-finite loss {loss_val} at epoch {epoch} batch {start // train_cfg.batch_size}")
            loss_sum += loss_val * len(batch)
            result.loss.backward()
            clip_grad_norm(store, train_cfg.grad_clip)
            adam_update(store, lr=train_cfg.learning_rate,
                        weight_decay=model_cfg.weight_decay)
        record.epoch_train_loss.append(loss_sum / len(episodes))

        val = evaluate(store, model_cfg, data.val, table)[metric_name]
        record.epoch_val_metric.append(val)
        if val > best_value:
            best_value = val
            record.selected_epoch = epoch
            best_snapshot = store.snapshot()
        log.debug("%s/%s seed=%d epoch %d: loss=%.4f val %s=%.4f", model_cfg.task,
                  model_cfg.variant, seed, epoch, record.epoch_train_loss[-1], metric_name, val)

    best_store = init_params(model_cfg, np.random.default_rng(seed))
    best_store.load_snapshot(best_snapshot)
    if data.test:
        record.test_metrics = evaluate(best_store, model_cfg, data.test, table)
    log.info("%s/%s seed=%d done in %.1fs: selected epoch %d (val %s=%.4f) test=%s",
             model_cfg.task, model_cfg.variant, seed, time.monotonic() - started,
             record.selected_epoch, metric_name, best_value, record.test_metrics)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "checkpoint.bin"
        save_checkpoint(ckpt, model_cfg, best_store)
        record.checkpoint = str(ckpt)
        (out_dir / "record.json").write_text(
            json.dumps(record.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return record, best_store


@dataclass
class ExperimentResult:
    """Comparison table over (task, variant): per-metric multi-seed reports."""

    tasks: tuple[str, ...]
    variants: tuple[str, ...]
    seeds: tuple[int, ...]
    reports: dict[str, dict[str, dict[str, MetricsReport]]]
    records: list[RunRecord] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "tasks": list(self.tasks),
            "variants": list(self.variants),
            "seeds": list(self.seeds),
            "metrics": {
                task: {variant: {name: report.to_json()
                                 for name, report in by_metric.items()}
                       for variant, by_metric in by_variant.items()}
                for task, by_variant in self.reports.items()
            },
        }

    def render_table(self) -> str:
        lines = []
        for task in self.tasks:
            names = TASK_METRICS[task]
            lines.append(f"== {task} ({', '.join(names)}; mean over seeds {list(self.seeds)})")
            width = max(len(v) for v in self.variants)
            for variant in self.variants:
                by_metric = self.reports[task][variant]
                cells = []
                for name in names:
                    rep = by_metric[name]
                    std = f" +/- {rep.std:.3f}" if rep.std is not None else ""
                    cells.append(f"{name}={rep.mean:.3f}{std}")
                lines.append(f"  {variant.ljust(width)}  " + "  ".join(cells))
        return "\n".join(lines)


def run_experiment(datasets: dict[str, DatasetSplits], variants: Sequence[str],
                   train_cfg: TrainConfig,
                   model_cfgs: dict[tuple[str, str], ModelConfig],
                   out_dir: Optional[str | Path] = None) -> ExperimentResult:
    """Train every (task, variant, seed) combination and aggregate test metrics."""
    tasks = tuple(datasets)
    result = ExperimentResult(tasks=tasks, variants=tuple(variants),
                              seeds=tuple(train_cfg.seeds), reports={})
    for task in tasks:
        data = datasets[task]
        result.reports[task] = {}
        for variant in variants:
            cfg = model_cfgs[(task, variant)]
            per_metric: dict[str, list[float]] = {name: [] for name in TASK_METRICS[task]}
            for seed in train_cfg.seeds:
                run_out = None
                if out_dir is not None:
                    run_out = Path(out_dir) / task / variant / f"seed{seed}"
                record, _ = train(cfg, data, train_cfg, seed, out_dir=run_out)
                result.records.append(record)
                for name in per_metric:
                    per_metric[name].append(record.test_metrics[name])
            result.reports[task][variant] = {
                name: aggregate_seeds(vals) for name, vals in per_metric.items()}
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "experiment.json").write_text(
            json.dumps(result.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return result
