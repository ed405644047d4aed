"""The four training loss terms and their weighted combination.

Terms, all batch means:
  * teacher cross-entropy against k-means pseudo-labels (full weight)
  * per-student cross-entropy against the same pseudo-labels, weight (1-alpha)
  * per-student KL(teacher softmax || student softmax), weight alpha
  * per-student feature-hints L2 between adapted and teacher features, weight lambda

The teacher side of the KL and hints terms is detached: students learn
from the teacher, never the other way around.  Per-student KL and hints
contributions are summed by default (``reduce="mean"`` averages instead).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from .errors import LabelError, NumericError, ShapeError
from .models import MultiExitOutput


def _as_batch(logits: torch.Tensor) -> torch.Tensor:
    if logits.ndim == 1:
        return logits.unsqueeze(0)
    if logits.ndim == 2:
        return logits
    raise ShapeError(f"expected logits of rank 1 or 2, got shape {tuple(logits.shape)}")


def ce_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean cross-entropy, -log softmax(logits)[label], via stable log-sum-exp."""
    logits = _as_batch(logits)
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device).reshape(-1)
    if labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"{logits.shape[0]} logit rows but {labels.shape[0]} labels")
    k = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"label out of range [0, {k})")
    log_probs = F.log_softmax(logits, dim=-1)
    return -log_probs.gather(1, labels.unsqueeze(1)).mean()


def kl_loss(teacher_logits: torch.Tensor, student_logits: torch.Tensor) -> torch.Tensor:
    """Mean KL(teacher || student) over the batch; teacher is a constant."""
    teacher_logits = _as_batch(teacher_logits)
    student_logits = _as_batch(student_logits)
    if teacher_logits.shape != student_logits.shape:
        raise ShapeError(
            f"teacher logits {tuple(teacher_logits.shape)} vs student logits "
            f"{tuple(student_logits.shape)}"
        )
    t_log = F.log_softmax(teacher_logits.detach(), dim=-1)
    s_log = F.log_softmax(student_logits, dim=-1)
    return (t_log.exp() * (t_log - s_log)).sum(dim=-1).mean()


def hints_loss(
    student_features: torch.Tensor, teacher_features: torch.Tensor, squared: bool = True
) -> torch.Tensor:
    """Mean per-sample L2 distance between flattened feature maps.

    Squared by default (smooth at zero); teacher features are a constant.
    """
    if student_features.shape != teacher_features.shape:
        raise ShapeError(
            f"student features {tuple(student_features.shape)} vs teacher features "
            f"{tuple(teacher_features.shape)}"
        )
    diff = student_features.flatten(1) - teacher_features.detach().flatten(1)
    sq = (diff**2).sum(dim=1)
    return sq.mean() if squared else sq.clamp_min(1e-24).sqrt().mean()


def total_loss(l_teacher, l_students: Sequence, l_kl, l_hints, alpha: float, lam: float):
    """teacher CE + (1-alpha) * sum(student CE) + alpha * KL + lambda * hints.

    Works on floats and on torch scalars alike.
    """
    return l_teacher + (1.0 - alpha) * sum(l_students) + alpha * l_kl + lam * l_hints


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar record of one batch/epoch worth of loss terms."""

    l_teacher: float
    l_students: tuple[float, ...]
    l_kl: float
    l_hints: float
    alpha: float
    lam: float
    total: float

    @property
    def l_students_sum(self) -> float:
        return float(sum(self.l_students))

    def composed_total(self) -> float:
        return total_loss(self.l_teacher, self.l_students, self.l_kl, self.l_hints, self.alpha, self.lam)


def make_breakdown(
    l_teacher: float,
    l_students: Sequence[float],
    l_kl: float,
    l_hints: float,
    alpha: float,
    lam: float,
) -> LossBreakdown:
    """Validate components are finite and compose the total."""
    components = {
        "l_teacher": float(l_teacher),
        "l_kl": float(l_kl),
        "l_hints": float(l_hints),
        **{f"l_students[{i}]": float(v) for i, v in enumerate(l_students)},
    }
    for name, value in components.items():
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss component {name}: {value}")
    students = tuple(float(v) for v in l_students)
    total = total_loss(float(l_teacher), students, float(l_kl), float(l_hints), alpha, lam)
    return LossBreakdown(
        l_teacher=float(l_teacher),
        l_students=students,
        l_kl=float(l_kl),
        l_hints=float(l_hints),
        alpha=alpha,
        lam=lam,
        total=total,
    )


def batch_losses(
    output: MultiExitOutput,
    pseudo_labels: torch.Tensor,
    alpha: float,
    lam: float,
    distill: bool = True,
    hints_squared: bool = True,
    reduce: str = "sum",
) -> tuple[torch.Tensor, LossBreakdown]:
    """Assemble the full objective for one batch.

    Returns the differentiable total plus a float breakdown for metrics.
    With ``distill=False`` every student term is exactly zero and the total
    reduces to the teacher cross-entropy alone.
    """
    l_teacher = ce_loss(output.teacher_logits, pseudo_labels)
    if distill and output.student_logits:
        l_students = [ce_loss(s, pseudo_labels) for s in output.student_logits]
        kl_terms = [kl_loss(output.teacher_logits, s) for s in output.student_logits]
        hint_terms = [
            hints_loss(f, output.teacher_features, squared=hints_squared)
            for f in output.student_features
        ]
        l_kl = sum(kl_terms)
        l_hints = sum(hint_terms)
        if reduce == "mean":
            l_kl = l_kl / len(kl_terms)
            l_hints = l_hints / len(hint_terms)
    else:
        l_students = []
        l_kl = 0.0
        l_hints = 0.0
    total = total_loss(l_teacher, l_students, l_kl, l_hints, alpha, lam)
    breakdown = make_breakdown(
        float(l_teacher.detach()),
        [float(v.detach()) for v in l_students],
        float(l_kl.detach()) if isinstance(l_kl, torch.Tensor) else l_kl,
        float(l_hints.detach()) if isinstance(l_hints, torch.Tensor) else l_hints,
        alpha,
        lam,
    )
    return total, breakdown
