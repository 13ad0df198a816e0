"""Built-in verification: analytic gradients vs central finite differences,
and metric implementations vs brute-force oracles.

The oracles here are deliberately naive (pairwise counting, threshold
enumeration, direct confusion-matrix formula) and share no code with the
production implementations in ``metrics``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .data import ClinicalNote, EmbeddingTable, Episode, EpisodeLabels, derive_hourly_labels
from .metrics import aucpr, auroc, linear_weighted_kappa
from .models import ModelConfig, batch_forward, init_params

GRAD_TOL = 1e-5
ORACLE_TOL = 1e-9

TINY = dict(feature_dim=3, lstm_hidden=4, embedding_dim=5,
            conv_widths=(2, 3), filters_per_width=2)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------- oracles

def auroc_oracle(scores, labels) -> float:
    """All positive/negative pairs; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def aucpr_oracle(scores, labels) -> float:
    """Enumerate every distinct score as a threshold; step-sum precision x recall gain."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    total = 0.0
    prev_recall = 0.0
    for threshold in sorted(set(scores.tolist()), reverse=True):
        predicted = scores >= threshold
        tp = int(((labels == 1) & predicted).sum())
        precision = tp / int(predicted.sum())
        recall = tp / n_pos
        total += precision * (recall - prev_recall)
        prev_recall = recall
    return total


def kappa_oracle(true_classes, pred_classes, num_classes: int) -> float:
    """Direct formula with explicit loops over the confusion matrix."""
    n = len(true_classes)
    observed = [[0.0] * num_classes for _ in range(num_classes)]
    for t, p in zip(true_classes, pred_classes):
        observed[t][p] += 1.0
    row = [sum(observed[i]) for i in range(num_classes)]
    col = [sum(observed[i][j] for i in range(num_classes)) for j in range(num_classes)]
    num = 0.0
    den = 0.0
    for i in range(num_classes):
        for j in range(num_classes):
            w = abs(i - j) / (num_classes - 1)
            num += w * observed[i][j]
            den += w * row[i] * col[j] / n
    return 1.0 - num / den


# ------------------------------------------------------- gradient checks

def _layer_checks(rng: np.random.Generator) -> list[tuple[str, Callable[[], float]]]:
    checks: list[tuple[str, Callable[[], float]]] = []

    def dense_check():
        x = nn.constant(rng.normal(size=3))
        w = nn.parameter(rng.normal(size=(2, 3)))
        b = nn.parameter(rng.normal(size=2))
        labels = np.array([1.0, 0.0])
        return nn.finite_difference_check(
            lambda: nn.binary_ce_logits(nn.dense(x, w, b), labels, np.full(2, 0.5)),
            {"w": w, "b": b})
    checks.append(("dense", dense_check))

    def cell_check():
        d, h = 3, 4
        w_in = nn.parameter(rng.normal(size=(4 * h, d)) * 0.5)
        w_rec = nn.parameter(rng.normal(size=(4 * h, h)) * 0.5)
        bias = nn.parameter(rng.normal(size=4 * h) * 0.2)
        head = nn.parameter(rng.normal(size=(1, h)))
        xs = rng.normal(size=(5, d))

        def loss():
            state = nn.initial_lstm_state(h)
            for t in range(5):
                state = nn.lstm_cell_step(nn.constant(xs[t]), state, w_in, w_rec, bias)
            logit = nn.reshape(nn.dense(state.hidden, head), (1,))
            return nn.binary_ce_logits(logit, np.array([1.0]), np.array([1.0]))
        return nn.finite_difference_check(loss, {"w_in": w_in, "w_rec": w_rec,
                                                 "bias": bias, "head": head})
    checks.append(("lstm_cell_step chained 5 steps", cell_check))

    def sequence_check():
        d, h, t_steps = 3, 4, 7
        w_in = nn.parameter(rng.normal(size=(4 * h, d)) * 0.5)
        w_rec = nn.parameter(rng.normal(size=(4 * h, h)) * 0.5)
        bias = nn.parameter(rng.normal(size=4 * h) * 0.2)
        head = nn.parameter(rng.normal(size=(1, h)))
        xs = rng.normal(size=(t_steps, 2, d))
        labels = np.array([1.0, 0.0])

        def loss():
            hs = nn.lstm_sequence(xs, w_in, w_rec, bias)
            last = nn.reshape(nn.slice_rows(hs, t_steps - 1, t_steps), (2, h))
            return nn.binary_ce_logits(nn.reshape(nn.dense(last, head), (2,)),
                                       labels, np.full(2, 0.5))
        return nn.finite_difference_check(loss, {"w_in": w_in, "w_rec": w_rec,
                                                 "bias": bias, "head": head})
    checks.append(("lstm_sequence fused", sequence_check))

    def conv_check():
        e = 5
        k2 = nn.parameter(rng.normal(size=(2, 2 * e)) * 0.4)
        b2 = nn.parameter(rng.normal(size=2) * 0.1)
        k3 = nn.parameter(rng.normal(size=(2, 3 * e)) * 0.4)
        b3 = nn.parameter(rng.normal(size=2) * 0.1)
        head = nn.parameter(rng.normal(size=(1, 4)))
        embeds = rng.normal(size=(9, e))

        def loss():
            z = nn.conv1d_maxpool(embeds, [(2, k2, b2), (3, k3, b3)])
            return nn.binary_ce_logits(nn.reshape(nn.dense(z, head), (1,)),
                                       np.array([1.0]), np.array([1.0]))
        return nn.finite_difference_check(loss, {"k2": k2, "b2": b2, "k3": k3,
                                                 "b3": b3, "head": head})
    checks.append(("conv1d_maxpool", conv_check))

    def dropout_check():
        w = nn.parameter(rng.normal(size=(2, 6)))
        x = nn.constant(rng.normal(size=6))
        labels = np.array([1.0, 0.0])

        def loss():
            # Reseeding inside the closure freezes the mask across calls.
            frozen = np.random.default_rng(1234)
            kept = nn.dropout(nn.dense(x, w), 0.4, training=True, rng=frozen)
            return nn.binary_ce_logits(kept, labels, np.full(2, 0.5))
        return nn.finite_difference_check(loss, {"w": w})
    checks.append(("dropout with frozen mask", dropout_check))

    def softmax_check():
        w = nn.parameter(rng.normal(size=(4, 3)))
        x = nn.constant(rng.normal(size=(6, 3)))
        labels = np.arange(6) % 4

        def loss():
            return nn.softmax_ce_logits(nn.dense(x, w), labels, np.full(6, 1 / 6))
        return nn.finite_difference_check(loss, {"w": w})
    checks.append(("softmax cross entropy", softmax_check))

    return checks


def tiny_table(rng: np.random.Generator, vocab_size: int = 12,
               embedding_dim: int = 5) -> EmbeddingTable:
    vocab = {f"w{i}": i for i in range(1, vocab_size)}
    vectors = rng.normal(size=(vocab_size, embedding_dim)) * 0.6
    vectors[0] = 0.0
    return EmbeddingTable(vocab=vocab, vectors=vectors)


def tiny_episode(rng: np.random.Generator, hours: int, feature_dim: int = 3,
                 vocab_size: int = 12, died: bool = False,
                 patient_id: str = "tiny") -> Episode:
    series = rng.normal(size=(hours, feature_dim))
    note_hours = sorted(rng.choice(np.arange(1, hours + 1), size=3, replace=False).tolist())
    notes = tuple(
        ClinicalNote(chart_time=int(ct),
                     token_ids=tuple(rng.integers(1, vocab_size, size=6).tolist()))
        for ct in note_hours)
    death_hour = hours if died else None
    decomp, los = derive_hourly_labels(hours, death_hour)
    labels = EpisodeLabels(mortality=(int(died) if hours >= 48 else None),
                           death_hour=death_hour, decompensation=decomp, los_buckets=los)
    return Episode(patient_id=patient_id, timeseries=series, notes=notes, labels=labels)


def _model_checks(rng: np.random.Generator, quick: bool) -> list[tuple[str, Callable[[], float]]]:
    table = tiny_table(rng)
    combos = []
    for task in ("ihm", "decomp", "los"):
        for variant in ("baseline", "multimodal_cnn", "multimodal_avgwe", "text_only"):
            combos.append((task, variant))
    if quick:
        combos = [("ihm", "multimodal_cnn"), ("decomp", "multimodal_cnn"),
                  ("los", "baseline"), ("decomp", "text_only")]

    checks = []
    for task, variant in combos:
        def make(task=task, variant=variant):
            hours = 48 if task == "ihm" else 9
            episode = tiny_episode(rng, hours, died=(task != "los"))
            cfg = ModelConfig(task=task, variant=variant, dropout=0.0,
                              **TINY)
            store = init_params(cfg, rng)

            def loss():
                return batch_forward([episode], store, cfg, table).loss
            return lambda: nn.finite_difference_check(loss, store)
        checks.append((f"model {task}/{variant}", make()))
    return checks


# ------------------------------------------------------------- the runner

def _run_metric_checks(rng: np.random.Generator, instances: int) -> list[CheckResult]:
    results = []
    fixed_auroc = auroc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0])
    fixed_aucpr = aucpr([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0])
    results.append(CheckResult("auroc fixed case", abs(fixed_auroc - 0.75) < 1e-12,
                               f"got {fixed_auroc}"))
    results.append(CheckResult("aucpr fixed case", abs(fixed_aucpr - 5 / 6) < 1e-12,
                               f"got {fixed_aucpr}"))

    worst = {"auroc": 0.0, "aucpr": 0.0, "kappa": 0.0}
    for _ in range(instances):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() == 0:
            labels[rng.integers(n)] = 1
        if labels.sum() == n:
            labels[rng.integers(n)] = 0
        scores = rng.random(n)
        if rng.random() < 0.5:
            scores = np.round(scores, 1)  # force tie groups
        worst["auroc"] = max(worst["auroc"],
                             abs(auroc(scores, labels) - auroc_oracle(scores, labels)))
        worst["aucpr"] = max(worst["aucpr"],
                             abs(aucpr(scores, labels) - aucpr_oracle(scores, labels)))

        c = int(rng.integers(2, 11))
        true_classes = rng.integers(0, c, size=n)
        pred_classes = rng.integers(0, c, size=n)
        if len(set(true_classes.tolist())) == 1 and \
                set(pred_classes.tolist()) == set(true_classes.tolist()):
            pred_classes[0] = (pred_classes[0] + 1) % c
        worst["kappa"] = max(worst["kappa"],
                             abs(linear_weighted_kappa(true_classes, pred_classes, c)
                                 - kappa_oracle(true_classes.tolist(),
                                                pred_classes.tolist(), c)))
    for name, err in worst.items():
        results.append(CheckResult(f"{name} vs oracle ({instances} instances)",
                                   err < ORACLE_TOL, f"max abs diff {err:.3e}"))
    return results


def run_selfcheck(quick: bool = False, seed: int = 2024) -> list[CheckResult]:
    """Run all gradient checks and metric oracle comparisons."""
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    for name, fn in _layer_checks(rng) + _model_checks(rng, quick):
        started = time.monotonic()
        err = fn()
        results.append(CheckResult(
            f"gradient {name}", err < GRAD_TOL,
            f"max rel err {err:.3e} ({time.monotonic() - started:.2f}s)"))
    results.extend(_run_metric_checks(rng, instances=40 if quick else 200))
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        lines.append(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    failed = sum(1 for r in results if not r.passed)
    lines.append(f"{len(results) - failed}/{len(results)} checks passed")
    return "\n".join(lines)
