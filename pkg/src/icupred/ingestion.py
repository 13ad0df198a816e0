"""Dataset ingestion: episode files, notes, labels, embeddings, manifests.

On-disk layout under a dataset root:

    manifest.json                  dataset-level metadata + split assignments
    embeddings.txt                 one token per line: ``<token> <v1> ... <vE>``
    episodes/<patient_id>/
        timeseries.csv             header ``hour,<feature names>``, rows 1..T
        notes.jsonl                lines ``{"hour": <float>, "text": "<str>"}``
        labels.json                ``{"mortality", "death_hour", "total_stay_hours"}``

Episodes may be read in parallel; results are merged deterministically by
sorted patient id.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import (
    IHM_WINDOW_HOURS,
    TASKS,
    ClinicalNote,
    EmbeddingTable,
    Episode,
    EpisodeLabels,
    derive_hourly_labels,
    validate_episode,
)
from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_NOTE_TRUNCATION = 2000
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str, vocab: dict[str, int]) -> tuple[int, ...]:
    """Lowercase, split on non-alphanumeric runs, map unknowns to index 0."""
    return tuple(vocab.get(tok, 0) for tok in _TOKEN_RE.findall(text.lower()))


def read_embeddings(path: str | Path) -> EmbeddingTable:
    """Load a text-format embedding file; row 0 stays reserved as the zero vector."""
    path = Path(path)
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    dim: Optional[int] = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ParseError("embedding line needs a token and at least one value",
                                 path=path, line=lineno)
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ParseError(
                    f"embedding dimension {len(values)} differs from first line's {dim}",
                    path=path, line=lineno)
            if token in vocab:
                log.warning("duplicate embedding token %r at %s:%d rejected", token, path, lineno)
                continue
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"bad embedding value: {exc}", path=path, line=lineno) from None
            vocab[token] = len(rows) + 1
            rows.append(vec)
    if dim is None:
        raise ParseError("embedding file is empty", path=path)
    vectors = np.zeros((len(rows) + 1, dim))
    if rows:
        vectors[1:] = np.stack(rows)
    return EmbeddingTable(vocab=vocab, vectors=vectors)


def read_timeseries_csv(path: str | Path,
                        feature_defaults: Optional[dict[str, float]] = None
                        ) -> tuple[np.ndarray, list[str]]:
    """Read the hourly feature matrix; missing cells are forward-filled,
    leading gaps take the feature's configured normal value (0.0 fallback)."""
    path = Path(path)
    defaults = feature_defaults or {}
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("timeseries file is empty", path=path) from None
        if not header or header[0] != "hour":
            raise ParseError(f"timeseries header must start with 'hour', got {header[:1]}",
                             path=path, line=1)
        names = header[1:]
        if not names:
            raise ParseError("timeseries has no feature columns", path=path, line=1)
        raw: list[list[Optional[float]]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"row has {len(row)} cells, header has {len(header)}",
                    path=path, line=lineno)
            try:
                hour = int(float(row[0]))
            except ValueError:
                raise ParseError(f"bad hour value {row[0]!r}", path=path, line=lineno) from None
            if hour != len(raw) + 1:
                raise ParseError(f"expected hour {len(raw) + 1}, got {hour}",
                                 path=path, line=lineno)
            vals: list[Optional[float]] = []
            for cell in row[1:]:
                cell = cell.strip()
                if cell == "":
                    vals.append(None)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"bad numeric cell {cell!r}", path=path,
                                     line=lineno) from None
            raw.append(vals)
    if not raw:
        raise ParseError("timeseries has no hourly rows", path=path)

    out = np.empty((len(raw), len(names)))
    for j, name in enumerate(names):
        last = defaults.get(name, 0.0)
        for i, vals in enumerate(raw):
            if vals[j] is not None:
                last = vals[j]
            out[i, j] = last
    return out, names


def read_notes_jsonl(path: str | Path, vocab: dict[str, int], total_hours: int,
                     truncation: int = DEFAULT_NOTE_TRUNCATION) -> tuple[ClinicalNote, ...]:
    """Read charted notes, tokenize, and normalise chart times.

    Notes without a chart time are dropped with a warning; hours <= 0 are
    pre-admission and merge into a single note at t=1; fractional hours round
    up; hours beyond the stay clamp to T.
    """
    path = Path(path)
    pre_admission: list[tuple[float, tuple[int, ...]]] = []
    timed: list[tuple[float, tuple[int, ...]]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc.msg}", path=path, line=lineno) from None
            if not isinstance(obj, dict) or "text" not in obj:
                raise ParseError("note line must be an object with 'text'", path=path, line=lineno)
            hour = obj.get("hour")
            if hour is None:
                log.warning("note without chart time dropped at %s:%d", path, lineno)
                continue
            tokens = tokenize(str(obj["text"]), vocab)[:truncation]
            if float(hour) <= 0:
                pre_admission.append((float(hour), tokens))
            else:
                timed.append((float(hour), tokens))

    notes: list[ClinicalNote] = []
    if pre_admission:
        pre_admission.sort(key=lambda x: x[0])
        merged: list[int] = []
        for _, tokens in pre_admission:
            merged.extend(tokens)
        notes.append(ClinicalNote(chart_time=1, token_ids=tuple(merged)))
    timed.sort(key=lambda x: x[0])
    for hour, tokens in timed:
        ct = int(math.ceil(hour))
        if ct > total_hours:
            log.warning("note charted at hour %s after stay end %d clamped at %s",
                        hour, total_hours, path)
            ct = total_hours
        notes.append(ClinicalNote(chart_time=max(1, ct), token_ids=tokens))
    notes.sort(key=lambda n: n.chart_time)
    return tuple(notes)


def read_labels_json(path: str | Path) -> tuple[Optional[int], Optional[int], int]:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON: {exc.msg}", path=path, line=exc.lineno) from None
    for key in ("mortality", "death_hour", "total_stay_hours"):
        if key not in obj:
            raise ParseError(f"labels object missing {key!r}", path=path)
    total = obj["total_stay_hours"]
    if not isinstance(total, int) or total < 1:
        raise ParseError(f"total_stay_hours must be a positive integer, got {total!r}", path=path)
    mortality = obj["mortality"]
    if mortality not in (0, 1, None):
        raise ParseError(f"mortality must be 0, 1, or null, got {mortality!r}", path=path)
    death_hour = obj["death_hour"]
    if death_hour is not None and (not isinstance(death_hour, int) or death_hour < 1):
        raise ParseError(f"death_hour must be a positive integer or null, got {death_hour!r}",
                         path=path)
    return mortality, death_hour, total


def read_episode(episode_dir: str | Path, vocab: dict[str, int],
                 feature_defaults: Optional[dict[str, float]] = None,
                 feature_stats: Optional[dict[str, tuple[float, float]]] = None,
                 truncation: int = DEFAULT_NOTE_TRUNCATION) -> Episode:
    """Assemble one Episode from its directory of benchmark-format files.

    ``feature_stats`` (name -> (mean, std)) standardises each column after
    imputation, mirroring the upstream benchmark's preprocessing; files stay
    in natural units.
    """
    episode_dir = Path(episode_dir)
    series, names = read_timeseries_csv(episode_dir / "timeseries.csv", feature_defaults)
    if feature_stats:
        for j, name in enumerate(names):
            if name in feature_stats:
                mean, std = feature_stats[name]
                series[:, j] = (series[:, j] - mean) / (std if std > 0 else 1.0)
    total_hours = series.shape[0]
    mortality, death_hour, total_declared = read_labels_json(episode_dir / "labels.json")
    if total_declared != total_hours:
        raise ParseError(
            f"labels declare {total_declared} stay hours but timeseries has {total_hours}",
            path=episode_dir / "labels.json")
    notes = read_notes_jsonl(episode_dir / "notes.jsonl", vocab, total_hours, truncation)
    if total_hours < IHM_WINDOW_HOURS:
        mortality = None
    decomp, los = derive_hourly_labels(total_hours, death_hour)
    labels = EpisodeLabels(mortality=mortality, death_hour=death_hour,
                           decompensation=decomp, los_buckets=los)
    return Episode(patient_id=episode_dir.name, timeseries=series, notes=notes, labels=labels)


@dataclass(frozen=True)
class ManifestEntry:
    patient_id: str
    path: str
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: tuple[ManifestEntry, ...]
    feature_names: tuple[str, ...]
    feature_defaults: dict[str, float]
    feature_stats: dict[str, tuple[float, float]]
    embedding_dim: int
    signal_plan: str
    seed: int

    def split_entries(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [e for e in self.entries if e.split == split]


def assign_splits(patient_ids: Sequence[str], rng: np.random.Generator,
                  test_fraction: float = 0.2, val_fraction: float = 0.15) -> dict[str, str]:
    """Partition patients into test, then val as a fraction of the remainder."""
    if not 0 <= test_fraction < 1 or not 0 <= val_fraction < 1:
        raise ValidationError("split fractions must lie in [0, 1)")
    ids = sorted(patient_ids)
    perm = rng.permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    n_val = int(round(val_fraction * (len(ids) - n_test)))
    assignment: dict[str, str] = {}
    for rank, idx in enumerate(perm):
        if rank < n_test:
            split = "test"
        elif rank < n_test + n_val:
            split = "val"
        else:
            split = "train"
        assignment[ids[idx]] = split
    return assignment


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    obj = {
        "signal_plan": manifest.signal_plan,
        "seed": manifest.seed,
        "feature_names": list(manifest.feature_names),
        "feature_defaults": manifest.feature_defaults,
        "feature_stats": {k: list(v) for k, v in manifest.feature_stats.items()},
        "embedding_dim": manifest.embedding_dim,
        "episodes": [
            {"patient_id": e.patient_id, "path": e.path, "split": e.split}
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(root: str | Path) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json"
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("manifest.json not found", path=path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON: {exc.msg}", path=path, line=exc.lineno) from None
    entries = []
    seen: set[str] = set()
    for item in obj["episodes"]:
        pid = item["patient_id"]
        if pid in seen:
            raise ParseError(f"patient {pid!r} listed twice in manifest", path=path)
        seen.add(pid)
        if item["split"] not in SPLITS:
            raise ParseError(f"unknown split {item['split']!r} for patient {pid!r}", path=path)
        entries.append(ManifestEntry(patient_id=pid, path=item["path"], split=item["split"]))
    entries.sort(key=lambda e: e.patient_id)
    return DatasetManifest(
        root=root,
        entries=tuple(entries),
        feature_names=tuple(obj["feature_names"]),
        feature_defaults={k: float(v) for k, v in obj.get("feature_defaults", {}).items()},
        feature_stats={k: (float(v[0]), float(v[1]))
                       for k, v in obj.get("feature_stats", {}).items()},
        embedding_dim=int(obj["embedding_dim"]),
        signal_plan=obj.get("signal_plan", "unknown"),
        seed=int(obj.get("seed", 0)),
    )


@dataclass
class DatasetSplits:
    """Episodes per split for one task, with the shared embedding table."""

    task: str
    train: list[Episode]
    val: list[Episode]
    test: list[Episode]
    table: EmbeddingTable
    feature_names: tuple[str, ...]
    exclusions: dict[str, int] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return len(self.feature_names)

    def split(self, name: str) -> list[Episode]:
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}; expected one of {SPLITS}")
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def load_dataset(root: str | Path, task: str,
                 truncation: int = DEFAULT_NOTE_TRUNCATION) -> DatasetSplits:
    """Load every episode for a task, excluding invalid ones with logged reasons."""
    if task not in TASKS:
        raise ValidationError(f"unknown task {task!r}; expected one of {TASKS}")
    manifest = read_manifest(root)
    table = read_embeddings(manifest.root / "embeddings.txt")
    if table.dim != manifest.embedding_dim:
        raise ParseError(
            f"embeddings have dim {table.dim} but manifest declares {manifest.embedding_dim}",
            path=manifest.root / "embeddings.txt")
    splits: dict[str, list[Episode]] = {name: [] for name in SPLITS}
    exclusions: dict[str, int] = {}
    for entry in manifest.entries:
        episode = read_episode(manifest.root / entry.path, table.vocab,
                               manifest.feature_defaults, manifest.feature_stats,
                               truncation)
        violations = validate_episode(episode, task)
        if violations:
            for v in violations:
                exclusions[v] = exclusions.get(v, 0) + 1
            log.info("excluding %s from task %s: %s", entry.patient_id, task,
                     "; ".join(violations))
            continue
        splits[entry.split].append(episode)
    if exclusions:
        total = sum(exclusions.values())
        log.info("task %s: excluded episodes (%d reasons counted): %s", task, total, exclusions)
    return DatasetSplits(task=task, train=splits["train"], val=splits["val"],
                         test=splits["test"], table=table,
                         feature_names=manifest.feature_names, exclusions=exclusions)
