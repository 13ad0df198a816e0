"""Synthetic benchmark-format dataset generator for desk-scale experiments.

Each patient carries two latent severity factors: one expressed through the
hourly vitals, one expressed through note content. The signal plan decides
which factors actually drive outcomes:

    mixed        both modalities informative (part of the risk lives only
                 in the notes)
    notes-only   vitals are pure distractors; notes carry all signal
    series-only  notes are filler at fixed word rates; vitals carry all signal

Everything is derived from the config seed; identical seeds produce
bytewise-identical trees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ValidationError
from .ingestion import DatasetManifest, ManifestEntry, assign_splits, write_manifest

SIGNAL_PLANS = ("mixed", "notes-only", "series-only")

FEATURE_NAMES = ("heart_rate", "sbp", "resp_rate", "spo2", "temp", "lactate")
FEATURE_DEFAULTS = {"heart_rate": 78.0, "sbp": 119.0, "resp_rate": 16.5,
                    "spo2": 96.5, "temp": 36.9, "lactate": 1.8}
# Population standardisation constants recorded in the manifest.
FEATURE_STATS = {"heart_rate": (78.0, 9.0), "sbp": (119.0, 10.0),
                 "resp_rate": (16.5, 3.5), "spo2": (96.0, 1.5),
                 "temp": (36.9, 0.8), "lactate": (1.9, 1.3)}

FILLER_WORDS = (
    "patient exam continue monitor plan assessment overnight family medication dose "
    "fluids respiratory cardiac renal neuro labs chest xray pending repeat morning "
    "rounds nursing lines access diet rate rhythm sinus breath sounds clear abdomen "
    "soft extremities pulses intact skin warm urine output adequate pain controlled "
    "sleep rest reviewed orders consult team note shift events none acute issues "
    "ongoing care unit bed telemetry scheduled results within normal limits daily"
).split()
SEVERE_WORDS = ("septic intubated pressors obtunded unresponsive deteriorating critical "
                "unstable worsening hypotensive oliguric acidotic febrile tachycardic "
                "hypoxic encephalopathic coagulopathy vasopressor dialysis declining").split()
RECOVER_WORDS = ("stable improving extubated ambulating alert tolerating weaning "
                 "comfortable afebrile oriented recovering participating").split()
CRISIS_WORDS = "arrest agonal moribund anuric asystole unarousable bradycardic gasping".split()
DISCHARGE_WORDS = "discharge home disposition followup outpatient transfer rehab".split()
DISPO_TODAY_WORDS = "today paperwork belongings ride finalized".split()
DISPO_SOON_WORDS = "tomorrow anticipate planning criteria pending".split()


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the generator; the seed fully determines the output."""

    patients: int = 100
    seed: int = 0
    signal_plan: str = "mixed"
    embedding_dim: int = 16
    test_fraction: float = 0.2
    val_fraction: float = 0.15

    def __post_init__(self):
        if self.patients < 1:
            raise ValidationError(f"patients must be >= 1, got {self.patients}")
        if self.signal_plan not in SIGNAL_PLANS:
            raise ValidationError(
                f"unknown signal plan {self.signal_plan!r}; expected one of {SIGNAL_PLANS}")
        if self.embedding_dim < 2:
            raise ValidationError(f"embedding_dim must be >= 2, got {self.embedding_dim}")


@dataclass(frozen=True)
class RawNote:
    hour: float
    text: str


@dataclass(frozen=True)
class PatientRecord:
    """Pre-serialisation form of one synthetic episode."""

    patient_id: str
    hours: int
    series: np.ndarray          # (T, D) with NaN marking missing cells
    notes: tuple[RawNote, ...]
    mortality: int
    death_hour: Optional[int]


def build_vocabulary() -> tuple[str, ...]:
    words: list[str] = []
    for group in (FILLER_WORDS, SEVERE_WORDS, RECOVER_WORDS, CRISIS_WORDS,
                  DISCHARGE_WORDS, DISPO_TODAY_WORDS, DISPO_SOON_WORDS):
        for w in group:
            if w not in words:
                words.append(w)
    return tuple(words)


def _plan_flags(plan: str) -> tuple[bool, bool]:
    return plan != "notes-only", plan != "series-only"  # (series informative, notes informative)


def _ar1(rng: np.random.Generator, n: int, sigma: float, rho: float = 0.75) -> np.ndarray:
    eps = rng.normal(0.0, sigma, size=n)
    out = np.empty(n)
    acc = eps[0]
    for i in range(n):
        acc = rho * acc + eps[i]
        out[i] = acc
    return out


def _compose_note(rng: np.random.Generator, n_filler: int, n_severe: int = 0,
                  n_recover: int = 0, n_crisis: int = 0, n_discharge: int = 0,
                  n_today: int = 0, n_soon: int = 0) -> str:
    # Status words are sampled without replacement: the count of distinct
    # words present carries the signal, which max-pooled filters can read.
    words: list[str] = []
    if n_filler > 0:
        words.extend(rng.choice(FILLER_WORDS, size=n_filler).tolist())
    for count, group in ((n_severe, SEVERE_WORDS), (n_recover, RECOVER_WORDS),
                         (n_crisis, CRISIS_WORDS), (n_discharge, DISCHARGE_WORDS),
                         (n_today, DISPO_TODAY_WORDS), (n_soon, DISPO_SOON_WORDS)):
        if count > 0:
            words.extend(rng.choice(group, size=min(count, len(group)),
                                    replace=False).tolist())
    if not words:
        words = ["note"]
    rng.shuffle(words)
    return " ".join(words) + "."


def _poisson(rng: np.random.Generator, rate: float, cap: int) -> int:
    return int(min(rng.poisson(max(rate, 0.0)), cap))


def synthesize_patient(patient_id: str, rng: np.random.Generator,
                       cfg: SyntheticConfig) -> PatientRecord:
    series_info, notes_info = _plan_flags(cfg.signal_plan)
    z_series = rng.normal()
    z_notes = rng.normal()
    if cfg.signal_plan == "mixed":
        risk = 0.7 * z_series + 1.7 * z_notes
    elif cfg.signal_plan == "notes-only":
        risk = 1.85 * z_notes
    else:
        risk = 1.85 * z_series
    p_death = 1.0 / (1.0 + math.exp(-(risk - 1.05)))
    dies = rng.random() < p_death
    dies_in_icu = dies and rng.random() >= 0.10

    if dies_in_icu:
        hours = 60 + int(rng.exponential(46.0))
        hours = min(hours, 320)
        death_hour: Optional[int] = hours
    else:
        # Sicker patients stay longer. Low-noise lognormal: the latents pin
        # the stay length well enough that remaining time is predictable.
        log_scale = (0.20 * (z_series if series_info else 0.0)
                     + 0.75 * (z_notes if notes_info else 0.0)
                     + rng.normal(0.0, 0.25))
        hours = 52 + int(45.0 * math.exp(log_scale))
        if rng.random() < 0.07:
            hours += int(rng.uniform(80.0, 280.0))
        hours = min(hours, 400)
        death_hour = None
    surviving_icu = death_hour is None

    # Hourly vitals. Severity deviations shrink as a surviving stay
    # progresses; in-ICU deaths add a terminal ramp over the last ~32 h.
    t = np.arange(1, hours + 1, dtype=np.float64)
    prog = t / hours
    recovery = 1.0 - 0.40 * prog if surviving_icu else np.ones_like(t)
    if dies_in_icu:
        ramp = np.clip(1.0 - (death_hour - t) / 20.0, 0.0, 1.0) ** 1.4
    else:
        ramp = np.zeros_like(t)
    u = z_series if series_info else 0.0
    ramp_on = ramp if series_info else np.zeros_like(t)
    d = len(FEATURE_NAMES)
    series = np.empty((hours, d))
    series[:, 0] = 78.0 + 7.0 * u * recovery + 13.0 * ramp_on + _ar1(rng, hours, 3.2)
    series[:, 1] = 119.0 - 6.0 * u * recovery - 15.0 * ramp_on + _ar1(rng, hours, 4.5)
    series[:, 2] = 16.5 + 1.6 * _ar1(rng, hours, 1.0)
    series[:, 3] = np.minimum(100.0, 96.5 - 1.1 * np.abs(_ar1(rng, hours, 1.0)))
    series[:, 4] = 36.9 + 0.35 * _ar1(rng, hours, 1.0)
    series[:, 5] = np.maximum(0.3, 1.8 + 0.55 * u * recovery + 2.2 * ramp_on
                              + _ar1(rng, hours, 0.35))
    missing = rng.random(size=series.shape) < 0.04
    series[missing] = np.nan

    # Notes.
    notes: list[RawNote] = []

    def admission_content(r):
        if notes_info:
            n_sev = _poisson(r, 2.6 + 2.0 * z_notes, 12)
            n_rec = _poisson(r, 2.0 - 1.5 * z_notes, 8)
        else:
            n_sev = _poisson(r, 1.5, 8)
            n_rec = _poisson(r, 1.5, 6)
        return _compose_note(r, 12 + _poisson(r, 8.0, 20), n_sev, n_rec)

    if rng.random() < 0.15:
        notes.append(RawNote(hour=-float(int(rng.uniform(1, 10))), text=admission_content(rng)))
    notes.append(RawNote(hour=1.0, text=admission_content(rng)))

    hour = 1.0 + rng.uniform(10.0, 20.0)
    while hour < hours - 2:
        proximity = max(0.0, 1.0 - (death_hour - hour) / 30.0) if dies_in_icu else 0.0
        state = z_notes * (1.0 - 0.55 * hour / hours) + 2.2 * proximity
        remaining = hours - hour
        n_today = n_soon = 0
        if notes_info:
            near_discharge = max(0.0, 1.0 - min(remaining, 72.0) / 72.0) if surviving_icu else 0.0
            n_sev = _poisson(rng, 1.0 + 1.2 * state, 8)
            n_rec = _poisson(rng, 1.2 - 1.1 * state + 1.6 * near_discharge
                             + (0.6 * hour / hours if surviving_icu else 0.0), 8)
            n_dis = _poisson(rng, 3.0 * near_discharge + 0.1, 6)
            if surviving_icu:
                # Disposition planning names its horizon.
                if remaining < 30.0:
                    n_today = _poisson(rng, 2.4 * (1.0 - remaining / 30.0) + 0.6, 5)
                elif remaining < 72.0:
                    n_soon = _poisson(rng, 1.6, 5)
        else:
            n_sev = _poisson(rng, 1.2, 8)
            n_rec = _poisson(rng, 1.2, 6)
            n_dis = _poisson(rng, 0.15, 2)
        text = _compose_note(rng, 10 + _poisson(rng, 7.0, 18), n_sev, n_rec, 0, n_dis,
                             n_today, n_soon)
        charted = hour if rng.random() < 0.5 else float(int(hour)) + 0.5
        notes.append(RawNote(hour=round(charted, 2), text=text))
        hour += rng.uniform(11.0, 20.0)

    if dies_in_icu and notes_info and rng.random() < 0.93:
        crisis_hour = death_hour - rng.uniform(6.0, 26.0)
        text = _compose_note(rng, 8 + _poisson(rng, 5.0, 12),
                             _poisson(rng, 2.0, 6), 0, 2 + _poisson(rng, 2.5, 6))
        notes.append(RawNote(hour=round(max(1.0, crisis_hour), 2), text=text))
    if surviving_icu and notes_info and rng.random() < 0.07 and hours > 24:
        text = _compose_note(rng, 8 + _poisson(rng, 5.0, 12),
                             _poisson(rng, 1.4, 5), 0, _poisson(rng, 1.1, 4))
        notes.append(RawNote(hour=round(rng.uniform(10.0, hours - 10.0), 2), text=text))

    notes.sort(key=lambda n: n.hour)
    return PatientRecord(patient_id=patient_id, hours=hours, series=series,
                         notes=tuple(notes), mortality=int(dies),
                         death_hour=death_hour)


def write_patient(record: PatientRecord, episode_dir: Path) -> None:
    episode_dir.mkdir(parents=True, exist_ok=True)
    lines = ["hour," + ",".join(FEATURE_NAMES)]
    for i in range(record.hours):
        cells = [str(i + 1)]
        for j in range(record.series.shape[1]):
            v = record.series[i, j]
            cells.append("" if np.isnan(v) else f"{v:.4f}")
        lines.append(",".join(cells))
    (episode_dir / "timeseries.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with (episode_dir / "notes.jsonl").open("w", encoding="utf-8") as fh:
        for note in record.notes:
            fh.write(json.dumps({"hour": note.hour, "text": note.text},
                                sort_keys=True) + "\n")

    labels = {"mortality": record.mortality, "death_hour": record.death_hour,
              "total_stay_hours": record.hours}
    (episode_dir / "labels.json").write_text(
        json.dumps(labels, sort_keys=True) + "\n", encoding="utf-8")


def write_embeddings(path: Path, vocab: tuple[str, ...], dim: int,
                     rng: np.random.Generator) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for word in vocab:
            vec = rng.normal(0.0, 0.6, size=dim)
            fh.write(word + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


def generate_synthetic(cfg: SyntheticConfig, out_dir: str | Path) -> DatasetManifest:
    """Write a complete dataset tree under ``out_dir`` and return its manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = np.random.SeedSequence(cfg.seed)
    embed_seed, split_seed, *patient_seeds = master.spawn(cfg.patients + 2)

    vocab = build_vocabulary()
    write_embeddings(out_dir / "embeddings.txt", vocab, cfg.embedding_dim,
                     np.random.default_rng(embed_seed))

    ids = [f"p{i:05d}" for i in range(cfg.patients)]
    for pid, seed in zip(ids, patient_seeds):
        record = synthesize_patient(pid, np.random.default_rng(seed), cfg)
        write_patient(record, out_dir / "episodes" / pid)

    splits = assign_splits(ids, np.random.default_rng(split_seed),
                           cfg.test_fraction, cfg.val_fraction)
    entries = tuple(ManifestEntry(patient_id=pid, path=f"episodes/{pid}", split=splits[pid])
                    for pid in ids)
    manifest = DatasetManifest(root=out_dir, entries=entries,
                               feature_names=FEATURE_NAMES,
                               feature_defaults=dict(FEATURE_DEFAULTS),
                               feature_stats=dict(FEATURE_STATS),
                               embedding_dim=cfg.embedding_dim,
                               signal_plan=cfg.signal_plan, seed=cfg.seed)
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest
