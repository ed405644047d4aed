"""Augmentation-free deep clustering with multi-exit self-distillation.

A multi-exit encoder is trained against spherical k-means pseudo-labels
(re-clustered and re-initialized every epoch) plus three distillation
terms that pull shallow student exits toward the deepest teacher exit.
Representation quality is measured with a frozen-encoder linear probe.
"""

from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .clustering import (
    EmbeddingBank,
    PseudoLabelTable,
    extract_embeddings,
    head_centroids,
    repair_empty_clusters,
    spherical_kmeans,
)
from .config import ModelConfig, TrainConfig, build_train_config, load_config_file
from .data import (
    Batch,
    Dataset,
    epoch_batches,
    load_cifar10,
    load_synthetic,
    make_synthetic_blobs,
    parse_cifar10_file,
    save_synthetic,
    serialize_cifar10,
)
from .evaluation import (
    ProbeConfig,
    ProbeResult,
    clustering_diagnostics,
    linear_probe,
    nmi,
)
from .losses import LossBreakdown, batch_losses, ce_loss, hints_loss, kl_loss, total_loss
from .models import MultiExitEncoder, MultiExitOutput, PrototypeBank, head_probabilities, init_model
from .trainer import MetricsRecord, TrainHooks, TrainResult, lr_at, run_epoch, train

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "CheckpointState",
    "Dataset",
    "EmbeddingBank",
    "LossBreakdown",
    "MetricsRecord",
    "ModelConfig",
    "MultiExitEncoder",
    "MultiExitOutput",
    "ProbeConfig",
    "ProbeResult",
    "PrototypeBank",
    "PseudoLabelTable",
    "TrainConfig",
    "TrainHooks",
    "TrainResult",
    "batch_losses",
    "build_train_config",
    "ce_loss",
    "clustering_diagnostics",
    "epoch_batches",
    "extract_embeddings",
    "head_centroids",
    "head_probabilities",
    "hints_loss",
    "init_model",
    "kl_loss",
    "linear_probe",
    "load_checkpoint",
    "load_cifar10",
    "load_config_file",
    "load_synthetic",
    "lr_at",
    "make_synthetic_blobs",
    "nmi",
    "parse_cifar10_file",
    "repair_empty_clusters",
    "run_epoch",
    "save_checkpoint",
    "save_synthetic",
    "serialize_cifar10",
    "spherical_kmeans",
    "total_loss",
    "train",
]
