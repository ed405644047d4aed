"""Spherical k-means over teacher embeddings and pseudo-label bookkeeping.

Lloyd's algorithm on the unit sphere: assignment by cosine similarity
(plain dot products, since rows are unit-norm), centroid update by the
renormalized member mean.  Empty clusters are repaired inside every
iteration by donating the worst-fitting member of the largest cluster.
All numerics run in float64 with fixed summation order, so a given
(matrix, K, seed) triple always produces identical output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .data import Dataset
from .errors import (
    EmptyClusterError,
    EmptyInputError,
    InsufficientPointsError,
    ShapeError,
    ClusterCollapseWarning,
)

COLLAPSE_FRACTION = 0.9


@dataclass
class PseudoLabelTable:
    """Per-sample cluster assignment, fixed for one epoch."""

    epoch: int
    labels: np.ndarray  # int64 (N,), values in [0, K)
    cluster_sizes: np.ndarray  # int64 (K,)

    @classmethod
    def from_labels(cls, epoch: int, labels: np.ndarray, num_clusters: int) -> "PseudoLabelTable":
        labels = np.asarray(labels, dtype=np.int64)
        sizes = np.bincount(labels, minlength=num_clusters).astype(np.int64)
        table = cls(epoch=epoch, labels=labels, cluster_sizes=sizes)
        if len(labels) and sizes.max() / len(labels) > COLLAPSE_FRACTION:
            warnings.warn(
                f"cluster collapse: {int(sizes.max())}/{len(labels)} samples share one "
                f"pseudo-label at epoch {epoch}",
                ClusterCollapseWarning,
                stacklevel=2,
            )
        return table

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def num_clusters(self) -> int:
        return self.cluster_sizes.shape[0]


@dataclass
class EmbeddingBank:
    """Unit-norm embeddings of the whole dataset, one matrix per head.

    Row order matches dataset indices; the teacher matrix feeds k-means,
    the per-head matrices feed per-head centroid re-initialization.
    """

    student_embeddings: list[np.ndarray]  # each (N, feature_dim)
    teacher_embeddings: np.ndarray
    epoch: int = -1

    @property
    def all_embeddings(self) -> list[np.ndarray]:
        return [*self.student_embeddings, self.teacher_embeddings]


def extract_embeddings(model, dataset: Dataset, batch_size: int = 512, epoch: int = -1) -> EmbeddingBank:
    """One full inference pass in dataset index order; no parameter updates."""
    n = len(dataset)
    if n == 0:
        raise EmptyInputError("cannot extract embeddings from an empty dataset")
    was_training = model.training
    model.eval()
    students: list[list[np.ndarray]] = [[] for _ in range(model.num_heads - 1)]
    teacher: list[np.ndarray] = []
    with torch.no_grad():
        for start in range(0, n, batch_size):
            x = torch.from_numpy(dataset.inputs[start : start + batch_size])
            out = model(x)
            for i, z in enumerate(out.student_embeddings):
                students[i].append(z.numpy().astype(np.float32))
            teacher.append(out.teacher_embeddings.numpy().astype(np.float32))
    if was_training:
        model.train()
    return EmbeddingBank(
        student_embeddings=[np.concatenate(chunks) for chunks in students],
        teacher_embeddings=np.concatenate(teacher),
        epoch=epoch,
    )


def kmeans_objective(Z: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    """Total cosine similarity of points to their assigned centroids."""
    return float(np.einsum("ij,ij->", Z, centroids[labels]))


def _unit_rows(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return M / norms


def _normalized_mean(members: np.ndarray, cluster_idx: int, dim: int) -> np.ndarray:
    """Renormalized member mean; antipodal degeneracy falls back to a basis
    vector so we never divide by zero."""
    mean = members.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        fallback = np.zeros(dim)
        fallback[cluster_idx % dim] = 1.0
        return fallback
    return mean / norm


def repair_empty_clusters(
    centroids: np.ndarray, labels: np.ndarray, Z: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Give every empty cluster one point from the largest cluster.

    The donated point is the member of the currently largest cluster with
    the lowest cosine to that cluster's centroid; it becomes the empty
    cluster's centroid and is relabeled.  All ties break toward the lowest
    index.  Inputs are not modified.
    """
    centroids = np.array(centroids, dtype=np.float64)
    labels = np.array(labels, dtype=np.int64)
    Z = np.asarray(Z, dtype=np.float64)
    k = centroids.shape[0]
    if k > Z.shape[0]:
        raise InsufficientPointsError(f"cannot fill {k} clusters from {Z.shape[0]} points")
    sizes = np.bincount(labels, minlength=k)
    while (sizes == 0).any():
        empty = int(np.nonzero(sizes == 0)[0][0])
        largest = int(np.argmax(sizes))
        members = np.nonzero(labels == largest)[0]
        cosines = Z[members] @ centroids[largest]
        donor = int(members[np.argmin(cosines)])
        centroids[empty] = Z[donor]
        labels[donor] = empty
        sizes[largest] -= 1
        sizes[empty] += 1
    return centroids, labels


def _init_centroids(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded sampling of K distinct rows, weighted toward spread-out picks.

    First row uniform; every next row is drawn with probability
    proportional to its cosine distance from the nearest already-chosen
    row (k-means++ style).  Single-run Lloyd escapes far fewer local
    optima under plain uniform seeding.
    """
    n = Z.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(k - 1):
        sims = Z @ Z[chosen].T
        dist = np.maximum(1.0 - sims.max(axis=1), 0.0)
        dist[chosen] = 0.0
        total = dist.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=dist / total))
        else:  # all remaining rows coincide with chosen ones
            nxt = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(nxt)
    return Z[np.array(chosen)].copy()


def lloyd_iterations(
    Z: np.ndarray, num_clusters: int, max_iters: int, seed: int
) -> Iterator[tuple[np.ndarray, np.ndarray, float]]:
    """Yield (centroids, labels, objective) after each assignment+repair.

    Follow-up centroid updates happen between yields; the final yielded
    state is self-consistent (centroids are the renormalized means of the
    yielded labels whenever the loop ran to convergence).
    """
    Z = _unit_rows(np.asarray(Z, dtype=np.float64))
    n, dim = Z.shape
    k = num_clusters
    if k < 1 or n < k:
        raise InsufficientPointsError(f"need at least K={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _init_centroids(Z, k, rng)
    labels = None
    for _ in range(max_iters):
        new_labels = np.argmax(Z @ centroids.T, axis=1)
        centroids, new_labels = repair_empty_clusters(centroids, new_labels, Z)
        converged = labels is not None and np.array_equal(new_labels, labels)
        labels = new_labels
        yield centroids.copy(), labels.copy(), kmeans_objective(Z, centroids, labels)
        if converged:
            return
        new_centroids = np.empty((k, dim))
        for c in range(k):
            new_centroids[c] = _normalized_mean(Z[labels == c], c, dim)
        centroids = new_centroids


def spherical_kmeans(
    Z: np.ndarray, num_clusters: int, max_iters: int = 100, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Run Lloyd iterations to convergence (or ``max_iters``).

    Returns unit-row centroids (K, d) and labels (N,).
    """
    centroids = labels = None
    for centroids, labels, _ in lloyd_iterations(Z, num_clusters, max_iters, seed):
        pass
    # make the returned centroids consistent with the final labels
    Z = _unit_rows(np.asarray(Z, dtype=np.float64))
    dim = Z.shape[1]
    final = np.empty((num_clusters, dim))
    for c in range(num_clusters):
        members = Z[labels == c]
        final[c] = _normalized_mean(members, c, dim) if len(members) else centroids[c]
    return final, labels


def head_centroids(Z_head: np.ndarray, labels: np.ndarray, num_clusters: int) -> np.ndarray:
    """Per-cluster renormalized means of one head's embeddings.

    Every cluster must be nonempty (run repair first).
    """
    Z_head = np.asarray(Z_head, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if Z_head.shape[0] != labels.shape[0]:
        raise ShapeError(f"{Z_head.shape[0]} embedding rows but {labels.shape[0]} labels")
    sizes = np.bincount(labels, minlength=num_clusters)
    if (sizes == 0).any():
        missing = int(np.nonzero(sizes == 0)[0][0])
        raise EmptyClusterError(f"cluster {missing} is empty; repair before computing centroids")
    dim = Z_head.shape[1]
    centroids = np.empty((num_clusters, dim))
    for c in range(num_clusters):
        centroids[c] = _normalized_mean(Z_head[labels == c], c, dim)
    return centroids


def cluster_size_entropy(sizes: np.ndarray) -> float:
    """Shannon entropy (nats) of the cluster-size distribution."""
    sizes = np.asarray(sizes, dtype=np.float64)
    total = sizes.sum()
    if total == 0:
        return 0.0
    p = sizes[sizes > 0] / total
    return float(-(p * np.log(p)).sum())


def save_assignments(table: PseudoLabelTable, path: str | Path) -> None:
    """Export one epoch's pseudo-labels as tab-delimited text."""
    lines = ["sample_index\tlabel"]
    lines += [f"{i}\t{int(label)}" for i, label in enumerate(table.labels)]
    Path(path).write_text("\n".join(lines) + "\n")
