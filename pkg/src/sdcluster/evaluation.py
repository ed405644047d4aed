"""Frozen-encoder evaluation: linear probe and clustering diagnostics.

The probe trains a single affine map on features extracted once from the
frozen encoder (pooled teacher features by default, projected embeddings
as the recorded alternative) and reports top-1 accuracy.  The encoder is
checksummed before and after to prove it never moved.

NMI here is normalized by the smaller of the two label entropies.  The
pipeline over-clusters on purpose (more prototypes than classes), and
under min-normalization a perfectly class-pure over-clustering scores 1
instead of being penalized for its extra clusters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .clustering import PseudoLabelTable, cluster_size_entropy
from .data import Dataset, epoch_permutation
from .errors import ConfigurationError, EmptyInputError, ShapeError
from .models import MultiExitEncoder

FEATURE_SOURCES = ("pooled_teacher", "projected_teacher")


@dataclass
class ProbeConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 256
    seed: int = 0
    feature_source: str = "pooled_teacher"

    def __post_init__(self):
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigurationError(
                f"feature_source must be one of {FEATURE_SOURCES}, got {self.feature_source!r}"
            )


@dataclass
class ProbeResult:
    train_accuracy: float
    test_accuracy: float
    epochs_run: int
    feature_source: str


def param_checksum(model: nn.Module) -> str:
    """SHA-256 over the full state dict (order-sensitive, bit-exact)."""
    digest = hashlib.sha256()
    for name, tensor in model.state_dict().items():
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def extract_probe_features(
    model: MultiExitEncoder, dataset: Dataset, source: str = "pooled_teacher", batch_size: int = 512
) -> np.ndarray:
    """Teacher features for every sample, in dataset index order."""
    if source not in FEATURE_SOURCES:
        raise ConfigurationError(f"unknown feature source {source!r}")
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            x = torch.from_numpy(dataset.inputs[start : start + batch_size])
            out = model(x)
            feat = out.teacher_pooled if source == "pooled_teacher" else out.teacher_embeddings
            chunks.append(feat.numpy().astype(np.float32))
    return np.concatenate(chunks)


def fit_linear_probe(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    test_features: np.ndarray,
    test_labels: np.ndarray,
    config: ProbeConfig | None = None,
) -> ProbeResult:
    """Train one affine classifier with Adam on fixed features."""
    config = config or ProbeConfig()
    num_classes = int(train_labels.max()) + 1
    if test_labels.size and int(test_labels.max()) >= num_classes:
        raise ConfigurationError(
            f"test labels go up to {int(test_labels.max())} but the probe has {num_classes} outputs"
        )
    torch.manual_seed(config.seed)
    clf = nn.Linear(train_features.shape[1], num_classes)
    optimizer = torch.optim.Adam(clf.parameters(), lr=config.lr)
    loss_fn = nn.CrossEntropyLoss()
    x_train = torch.from_numpy(np.ascontiguousarray(train_features, dtype=np.float32))
    y_train = torch.from_numpy(np.ascontiguousarray(train_labels, dtype=np.int64))
    n = x_train.shape[0]
    for epoch in range(config.epochs):
        perm = epoch_permutation(n, epoch, config.seed)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            optimizer.zero_grad(set_to_none=True)
            loss = loss_fn(clf(x_train[idx]), y_train[idx])
            loss.backward()
            optimizer.step()

    def accuracy(features: np.ndarray, labels: np.ndarray) -> float:
        with torch.no_grad():
            logits = clf(torch.from_numpy(np.ascontiguousarray(features, dtype=np.float32)))
        pred = logits.argmax(dim=1).numpy()
        return float((pred == labels).mean())

    return ProbeResult(
        train_accuracy=accuracy(train_features, train_labels),
        test_accuracy=accuracy(test_features, test_labels),
        epochs_run=config.epochs,
        feature_source=config.feature_source,
    )


def linear_probe(
    model: MultiExitEncoder,
    train_dataset: Dataset,
    test_dataset: Dataset,
    config: ProbeConfig | None = None,
) -> ProbeResult:
    """Freeze the encoder, fit the probe on train features, score both splits."""
    config = config or ProbeConfig()
    if train_dataset.labels is None or test_dataset.labels is None:
        raise ConfigurationError("linear probe requires labeled train and test datasets")
    before = param_checksum(model)
    train_features = extract_probe_features(model, train_dataset, config.feature_source)
    test_features = extract_probe_features(model, test_dataset, config.feature_source)
    result = fit_linear_probe(
        train_features, train_dataset.labels, test_features, test_dataset.labels, config
    )
    after = param_checksum(model)
    if before != after:
        raise RuntimeError("encoder parameters changed during probing")
    return result


def nmi(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Mutual information normalized by the smaller label entropy.

    Symmetric, invariant to relabeling either side.  Two trivial
    single-cluster partitions score 1; one trivial side scores 0.
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.size == 0:
        raise EmptyInputError("nmi of empty label arrays")
    if a.shape != b.shape:
        raise ShapeError(f"label arrays of length {a.size} vs {b.size}")
    n = a.size
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    num_a = int(a_idx.max()) + 1
    num_b = int(b_idx.max()) + 1
    contingency = np.zeros((num_a, num_b), dtype=np.float64)
    np.add.at(contingency, (a_idx, b_idx), 1.0)
    p_ab = contingency / n
    p_a = p_ab.sum(axis=1)
    p_b = p_ab.sum(axis=0)
    h_a = float(-(p_a[p_a > 0] * np.log(p_a[p_a > 0])).sum())
    h_b = float(-(p_b[p_b > 0] * np.log(p_b[p_b > 0])).sum())
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    mask = p_ab > 0
    outer = np.outer(p_a, p_b)
    mi = float((p_ab[mask] * np.log(p_ab[mask] / outer[mask])).sum())
    return float(np.clip(mi / min(h_a, h_b), 0.0, 1.0))


def clustering_diagnostics(table: PseudoLabelTable, true_labels: np.ndarray) -> dict:
    """NMI against ground truth plus cluster-size entropy."""
    true_labels = np.asarray(true_labels)
    if len(table) == 0 or true_labels.size == 0:
        raise EmptyInputError("empty pseudo-label table or truth labels")
    if len(table) != true_labels.size:
        raise ShapeError(f"table covers {len(table)} samples, truth has {true_labels.size}")
    return {
        "nmi": nmi(table.labels, true_labels),
        "cluster_entropy": cluster_size_entropy(table.cluster_sizes),
    }


def probe_report_text(result: ProbeResult, diagnostics: dict | None = None) -> str:
    """Tab-delimited report (metric, value per row)."""
    rows = [
        ("feature_source", result.feature_source),
        ("epochs_run", result.epochs_run),
        ("train_accuracy", repr(result.train_accuracy)),
        ("test_accuracy", repr(result.test_accuracy)),
    ]
    if diagnostics:
        rows += [(key, repr(value)) for key, value in sorted(diagnostics.items())]
    return "metric\tvalue\n" + "\n".join(f"{k}\t{v}" for k, v in rows) + "\n"
