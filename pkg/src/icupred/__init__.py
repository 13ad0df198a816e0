"""Multimodal ICU outcome prediction: LSTM over hourly vitals fused with
convolutional features from irregularly charted clinical notes, for
in-hospital mortality, decompensation, and length-of-stay forecasting."""

from .data import (
    FIRST_PREDICTION_HOUR,
    IHM_WINDOW_HOURS,
    LOS_CLASSES,
    TASKS,
    ClinicalNote,
    EmbeddingTable,
    Episode,
    EpisodeLabels,
    bucketize_los,
    validate_episode,
)
from .ingestion import DatasetSplits, load_dataset, read_embeddings, read_episode, tokenize
from .metrics import MetricsReport, aggregate_seeds, aucpr, auroc, linear_weighted_kappa
from .models import (
    VARIANTS,
    ModelConfig,
    PredictionSeries,
    baseline_forward,
    batch_forward,
    compute_loss,
    forward_episode,
    ihm_multimodal_forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    seq_multimodal_forward,
    text_only_forward,
)
from .synthetic import SyntheticConfig, generate_synthetic
from .textfeat import (
    NoteFeature,
    aggregate_note_features,
    avg_word_embedding,
    concat_notes,
    decay_weight,
    extract_note_feature,
)
from .training import RunRecord, TrainConfig, evaluate, run_experiment, train

__version__ = "0.1.0"
