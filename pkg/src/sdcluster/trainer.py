"""Training loop: assign pseudo-labels, re-init prototypes, optimize.

Each epoch runs, in order:
  1. a full inference pass extracting unit-norm embeddings for every head;
  2. spherical k-means on the teacher embeddings (with empty-cluster
     repair) producing this epoch's pseudo-label table;
  3. per-head centroid computation overwriting every prototype bank
     (previous bank values are discarded entirely);
  4. one SGD-with-momentum pass over all batches minimizing the combined
     objective, with linear-warmup + cosine learning-rate schedule.

Pseudo-labels never change mid-epoch.  Prototype banks receive gradient
updates only once the global step counter reaches ``frozen_proto_iters``
(counted across epochs) and are renormalized to unit rows after every
update.  Weight decay applies to encoder and projection parameters, never
to the banks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .clustering import (
    PseudoLabelTable,
    cluster_size_entropy,
    extract_embeddings,
    head_centroids,
    save_assignments,
    spherical_kmeans,
)
from .config import TrainConfig, config_to_flat_dict
from .data import Dataset, epoch_batches
from .errors import (
    ConfigurationError,
    EmptyInputError,
    InsufficientPointsError,
    NumericAbortError,
    NumericError,
)
from .fileio import atomic_write_text
from .losses import LossBreakdown, batch_losses, make_breakdown
from .models import MultiExitEncoder, init_model

METRICS_COLUMNS = (
    "epoch",
    "step",
    "lr",
    "loss_total",
    "loss_teacher_ce",
    "loss_student_ce_sum",
    "loss_kl",
    "loss_hints",
    "cluster_min",
    "cluster_max",
    "cluster_entropy",
    "seconds",
)

_KMEANS_TAG = 0x4B


def derive_seed(*parts: int) -> int:
    """Independent integer seed derived from a tuple of nonnegative ints."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint32)[0])


@dataclass
class MetricsRecord:
    epoch: int
    global_step: int
    learning_rate: float
    loss: LossBreakdown
    cluster_min: int
    cluster_max: int
    cluster_entropy: float
    seconds: float

    def csv_row(self) -> str:
        values = (
            self.epoch,
            self.global_step,
            repr(self.learning_rate),
            repr(self.loss.total),
            repr(self.loss.l_teacher),
            repr(self.loss.l_students_sum),
            repr(self.loss.l_kl),
            repr(self.loss.l_hints),
            self.cluster_min,
            self.cluster_max,
            repr(self.cluster_entropy),
            f"{self.seconds:.3f}",
        )
        return ",".join(str(v) for v in values)


@dataclass
class TrainHooks:
    """Optional observation points, mainly for tests.

    ``after_assign(epoch, model, table)`` fires once pseudo-labels are
    fixed and all banks hold their fresh centroid values, before any SGD
    step of the epoch.  ``after_epoch(epoch, model, record)`` fires after
    the epoch's optimization pass.
    """

    after_assign: Callable | None = None
    after_epoch: Callable | None = None


@dataclass
class TrainResult:
    model: MultiExitEncoder
    metrics: list[MetricsRecord] = field(default_factory=list)
    final_checkpoint: Path | None = None
    last_table: PseudoLabelTable | None = None


def lr_at(global_step: int, steps_per_epoch: int, config: TrainConfig) -> float:
    """Learning rate at a 0-indexed optimizer step.

    Linear from ``warmup_start_lr`` to ``base_lr`` across the warmup
    steps, then cosine from ``base_lr`` to ``final_lr``, hitting
    ``final_lr`` exactly at the run's last step.
    """
    warmup_steps = config.warmup_epochs * steps_per_epoch
    total_steps = config.epochs * steps_per_epoch
    if global_step < warmup_steps:
        frac = global_step / warmup_steps
        return config.warmup_start_lr + (config.base_lr - config.warmup_start_lr) * frac
    last = total_steps - 1
    if last <= warmup_steps:
        return config.base_lr if global_step <= warmup_steps else config.final_lr
    frac = min((global_step - warmup_steps) / (last - warmup_steps), 1.0)
    return config.final_lr + 0.5 * (config.base_lr - config.final_lr) * (1.0 + math.cos(math.pi * frac))


def build_optimizer(model: MultiExitEncoder, config: TrainConfig) -> torch.optim.SGD:
    bank_params = list(model.banks.parameters())
    bank_ids = {id(p) for p in bank_params}
    encoder_params = [p for p in model.parameters() if id(p) not in bank_ids]
    return torch.optim.SGD(
        [
            {"params": encoder_params, "weight_decay": config.weight_decay},
            {"params": bank_params, "weight_decay": 0.0},
        ],
        lr=config.base_lr,
        momentum=config.momentum,
    )


def run_epoch(
    model: MultiExitEncoder,
    optimizer: torch.optim.Optimizer,
    dataset: Dataset,
    table: PseudoLabelTable,
    epoch: int,
    global_step: int,
    steps_per_epoch: int,
    config: TrainConfig,
) -> tuple[int, LossBreakdown, float]:
    """One SGD pass over all batches; returns (new_step, mean losses, last lr)."""
    if len(table) != len(dataset):
        raise ConfigurationError(f"table covers {len(table)} samples, dataset has {len(dataset)}")
    if table.epoch != epoch:
        raise ConfigurationError(f"table is for epoch {table.epoch}, not {epoch}")
    model.train()
    frozen_iters = config.frozen_proto_iters
    num_students = model.num_heads - 1
    sums = {"t": 0.0, "kl": 0.0, "h": 0.0}
    student_sums = [0.0] * num_students
    weight = 0
    lr = config.base_lr
    for batch in epoch_batches(dataset, config.batch_size, epoch, config.seed):
        frozen = global_step < frozen_iters
        for bank in model.banks:
            bank.frozen = frozen
        lr = lr_at(global_step, steps_per_epoch, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        inputs = torch.from_numpy(batch.inputs)
        labels = torch.from_numpy(table.labels[batch.indices])
        output = model(inputs)
        total, breakdown = batch_losses(
            output,
            labels,
            alpha=config.alpha,
            lam=config.lam,
            distill=config.distill,
            hints_squared=config.hints_squared,
            reduce=config.distill_reduce,
        )
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        if frozen:
            for p in model.banks.parameters():
                p.grad = None
        optimizer.step()
        if not frozen:
            for bank in model.banks:
                bank.renormalize_()
        global_step += 1
        b = len(batch)
        weight += b
        sums["t"] += breakdown.l_teacher * b
        sums["kl"] += breakdown.l_kl * b
        sums["h"] += breakdown.l_hints * b
        for i, v in enumerate(breakdown.l_students):
            student_sums[i] += v * b
    mean = make_breakdown(
        sums["t"] / weight,
        [s / weight for s in student_sums] if config.distill else [],
        sums["kl"] / weight,
        sums["h"] / weight,
        config.alpha,
        config.lam,
    )
    # the composed total of means equals the mean of totals (affine weights)
    return global_step, mean, lr


def _write_metadata(config: TrainConfig, dataset: Dataset, out_dir: Path, extra: dict | None) -> None:
    import json

    metadata = {
        "config": config_to_flat_dict(config),
        "dataset": {"kind": dataset.kind, "size": len(dataset)},
        "choices": {
            "assignment_features": "teacher_embeddings",
            "assignment_pass": "dedicated_full_pass_eval_mode",
            "prototype_weight_decay": "excluded",
            "frozen_counter": "global_steps",
            "loss_reduction": "batch_mean",
            "distill_reduce": config.distill_reduce,
            "hints_squared": config.hints_squared,
            "schedule": "linear_warmup_then_cosine",
        },
    }
    if extra:
        metadata["cli"] = extra
    atomic_write_text(out_dir / "metadata.json", json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def train(
    config: TrainConfig,
    dataset: Dataset,
    out_dir: str | Path | None = None,
    hooks: TrainHooks | None = None,
    dump_assignments: bool = False,
    extra_metadata: dict | None = None,
) -> TrainResult:
    """Full alternating training run.

    With ``out_dir`` set, writes the resolved config snapshot and run
    metadata before the first step, appends one metrics row per epoch,
    keeps the last two per-epoch checkpoints, and always writes
    ``checkpoints/final.ckpt``.
    """
    if len(dataset) == 0:
        raise EmptyInputError("cannot train on an empty dataset")
    k = config.model.num_prototypes
    if len(dataset) < k:
        raise ConfigurationError(f"dataset has {len(dataset)} samples but K={k} prototypes")
    hooks = hooks or TrainHooks()

    metrics_path = ckpt_dir = assign_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        from .config import write_config_snapshot

        write_config_snapshot(config, out_dir / "config.cfg")
        _write_metadata(config, dataset, out_dir, extra_metadata)
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        metrics_path.write_text(",".join(METRICS_COLUMNS) + "\n")
        if dump_assignments:
            assign_dir = out_dir / "assignments"
            assign_dir.mkdir(exist_ok=True)

    model = init_model(config.model, config.seed)
    optimizer = build_optimizer(model, config)
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    global_step = 0
    result = TrainResult(model=model)
    last_ckpt: Path | None = None
    epoch_ckpts: list[Path] = []

    def write_ckpt(path: Path, epoch: int) -> Path:
        save_checkpoint(
            path, model, dataset.channel_mean, dataset.channel_std, global_step, epoch, config.seed
        )
        return path

    for epoch in range(config.epochs):
        t_start = time.perf_counter()
        bank_embeddings = extract_embeddings(model, dataset, epoch=epoch)
        kmeans_seed = derive_seed(config.seed, epoch, _KMEANS_TAG)
        try:
            _, labels = spherical_kmeans(
                bank_embeddings.teacher_embeddings, k, config.kmeans_max_iters, kmeans_seed
            )
        except InsufficientPointsError as exc:
            raise ConfigurationError(str(exc)) from exc
        table = PseudoLabelTable.from_labels(epoch, labels, k)
        for i, z in enumerate(bank_embeddings.all_embeddings):
            model.banks[i].set_prototypes_(head_centroids(z, labels, k))
        if hooks.after_assign:
            hooks.after_assign(epoch, model, table)
        if assign_dir is not None:
            save_assignments(table, assign_dir / f"epoch_{epoch:04d}.tsv")

        try:
            global_step, mean_loss, lr = run_epoch(
                model, optimizer, dataset, table, epoch, global_step, steps_per_epoch, config
            )
        except NumericError as exc:
            raise NumericAbortError(
                f"non-finite loss at epoch {epoch}: {exc}", checkpoint_path=last_ckpt
            ) from exc

        record = MetricsRecord(
            epoch=epoch,
            global_step=global_step,
            learning_rate=lr,
            loss=mean_loss,
            cluster_min=int(table.cluster_sizes.min()),
            cluster_max=int(table.cluster_sizes.max()),
            cluster_entropy=cluster_size_entropy(table.cluster_sizes),
            seconds=time.perf_counter() - t_start,
        )
        result.metrics.append(record)
        result.last_table = table
        if metrics_path is not None:
            with metrics_path.open("a") as fh:
                fh.write(record.csv_row() + "\n")
                fh.flush()
        if ckpt_dir is not None:
            last_ckpt = write_ckpt(ckpt_dir / f"epoch_{epoch:04d}.ckpt", epoch)
            epoch_ckpts.append(last_ckpt)
            while len(epoch_ckpts) > 2:
                old = epoch_ckpts.pop(0)
                old.unlink(missing_ok=True)
        if hooks.after_epoch:
            hooks.after_epoch(epoch, model, record)

    if ckpt_dir is not None:
        result.final_checkpoint = write_ckpt(ckpt_dir / "final.ckpt", config.epochs - 1)
    return result
