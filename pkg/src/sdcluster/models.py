"""Multi-exit encoder: a backbone with student bottleneck branches.

Student branches tap intermediate backbone stages; each branch runs a
bottleneck adapter so its feature map matches the shape of the deepest
(teacher) features, enabling the feature-hints loss.  Every head (students
and teacher) pools its features, projects them through a two-layer head,
L2-normalizes the embedding, and scores cosine logits against its own bank
of unit-norm prototypes divided by the temperature.

Supported backbones:
  * ``resnet18``: 3x3 stem (no max-pool, sized for 32x32 inputs), four
    stages of two basic blocks; student exits attach after stages 1-3.
  * ``tiny_mlp``: two affine+activation blocks on flat inputs; one student
    exit after block 1 with an identity adapter.  Small enough for
    finite-difference gradient checks in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .errors import NumericError, ShapeError

RESNET_STAGE_WIDTHS = (64, 128, 256, 512)


def l2_normalize(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Normalize rows to unit L2 norm (scale-invariant in the input)."""
    return x / x.norm(dim=-1, keepdim=True).clamp_min(eps)


def head_probabilities(logits):
    """Stable softmax (max-subtracted) for a logit vector or batch of rows.

    Accepts numpy arrays or torch tensors and returns the same kind.
    Raises NumericError on NaN/Inf inputs.
    """
    if isinstance(logits, torch.Tensor):
        if not torch.isfinite(logits).all():
            raise NumericError("non-finite logits")
        shifted = logits - logits.max(dim=-1, keepdim=True).values
        exp = shifted.exp()
        return exp / exp.sum(dim=-1, keepdim=True)
    arr = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NumericError("non-finite logits")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


@dataclass
class MultiExitOutput:
    """One forward pass through every head.

    Student lists are ordered shallow-to-deep and have exactly
    ``num_student_exits`` entries; each adapted student feature tensor has
    the same shape as ``teacher_features``.
    """

    student_features: list[torch.Tensor]
    teacher_features: torch.Tensor
    student_pooled: list[torch.Tensor]
    teacher_pooled: torch.Tensor
    student_embeddings: list[torch.Tensor]
    teacher_embeddings: torch.Tensor
    student_logits: list[torch.Tensor]
    teacher_logits: torch.Tensor

    @property
    def all_embeddings(self) -> list[torch.Tensor]:
        return [*self.student_embeddings, self.teacher_embeddings]

    @property
    def all_logits(self) -> list[torch.Tensor]:
        return [*self.student_logits, self.teacher_logits]


class PrototypeBank(nn.Module):
    """K unit-norm prototype rows acting as a cosine classifier."""

    def __init__(self, num_prototypes: int, feature_dim: int, temperature: float):
        super().__init__()
        self.temperature = temperature
        self.weight = nn.Parameter(torch.randn(num_prototypes, feature_dim))
        self.frozen = False
        with torch.no_grad():
            self.renormalize_()

    @torch.no_grad()
    def renormalize_(self) -> None:
        self.weight.copy_(l2_normalize(self.weight))

    @torch.no_grad()
    def set_prototypes_(self, centroids) -> None:
        """Overwrite all rows (renormalized); discards previous values."""
        new = torch.as_tensor(np.asarray(centroids), dtype=self.weight.dtype)
        if new.shape != self.weight.shape:
            raise ShapeError(f"expected prototypes {tuple(self.weight.shape)}, got {tuple(new.shape)}")
        self.weight.copy_(l2_normalize(new))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return z @ self.weight.t() / self.temperature


class ProjectionHead(nn.Module):
    """affine -> activation -> affine; the caller L2-normalizes the output."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, activation: nn.Module):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden_dim), activation, nn.Linear(hidden_dim, out_dim)
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


def _make_activation(name: str) -> nn.Module:
    return nn.Tanh() if name == "tanh" else nn.ReLU()


class TinyMLPBackbone(nn.Module):
    """Two affine+activation blocks over flat inputs."""

    def __init__(self, input_dim: int, width: int, activation: str):
        super().__init__()
        self.input_dim = input_dim
        self.block1 = nn.Sequential(nn.Linear(input_dim, width), _make_activation(activation))
        self.block2 = nn.Sequential(nn.Linear(width, width), _make_activation(activation))
        self.stage_widths = (width, width)

    def stage_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(
                f"tiny_mlp expects (B, {self.input_dim}) inputs, got {tuple(x.shape)}"
            )
        f1 = self.block1(x)
        f2 = self.block2(f1)
        return [f1, f2]


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), nn.BatchNorm2d(out_ch)
            )
        else:
            self.shortcut = nn.Identity()
        self.relu = nn.ReLU()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class ResNet18Backbone(nn.Module):
    """resnet18-style CNN for 32x32 inputs: 3x3 stem, no initial max-pool."""

    def __init__(self):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, 64, 3, stride=1, padding=1, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(),
        )
        stages = []
        in_ch = 64
        for i, out_ch in enumerate(RESNET_STAGE_WIDTHS):
            stride = 1 if i == 0 else 2
            stages.append(
                nn.Sequential(BasicBlock(in_ch, out_ch, stride), BasicBlock(out_ch, out_ch, 1))
            )
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.stage_widths = RESNET_STAGE_WIDTHS

    def stage_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"resnet18 expects (B, 3, H, W) inputs, got {tuple(x.shape)}")
        out = self.stem(x)
        feats = []
        for stage in self.stages:
            out = stage(out)
            feats.append(out)
        return feats


class ConvExitAdapter(nn.Module):
    """Strided conv reduction bringing an intermediate map to teacher shape."""

    def __init__(self, in_ch: int, widths: tuple[int, ...]):
        super().__init__()
        layers = []
        for out_ch in widths:
            layers += [
                nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(),
            ]
            in_ch = out_ch
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MultiExitEncoder(nn.Module):
    """Backbone + student exits + per-head projection heads and prototype banks.

    Head order everywhere is students shallow-to-deep, then the teacher
    last.  Student branches never feed the teacher path, so zeroing a
    branch cannot change teacher outputs.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        s = config.num_student_exits
        if config.backbone == "tiny_mlp":
            self.backbone = TinyMLPBackbone(config.input_dim, config.mlp_width, config.activation)
            self.adapters = nn.ModuleList([nn.Identity()])
            pooled_width = config.mlp_width
            self._exit_stages = [0]
        else:
            self.backbone = ResNet18Backbone()
            teacher_width = RESNET_STAGE_WIDTHS[-1]
            adapters = []
            for stage in range(s):
                widths = RESNET_STAGE_WIDTHS[stage + 1 :]
                adapters.append(ConvExitAdapter(RESNET_STAGE_WIDTHS[stage], widths))
            self.adapters = nn.ModuleList(adapters)
            pooled_width = teacher_width
            self._exit_stages = list(range(s))
        act = config.activation
        self.heads = nn.ModuleList(
            ProjectionHead(pooled_width, config.hidden_dim, config.feature_dim, _make_activation(act))
            for _ in range(s + 1)
        )
        self.banks = nn.ModuleList(
            PrototypeBank(config.num_prototypes, config.feature_dim, config.temperature)
            for _ in range(s + 1)
        )
        self.pooled_width = pooled_width

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @property
    def teacher_bank(self) -> PrototypeBank:
        return self.banks[-1]

    def _pool(self, feat: torch.Tensor) -> torch.Tensor:
        if feat.ndim == 4:
            return feat.mean(dim=(2, 3))
        return feat

    def forward(self, x: torch.Tensor) -> MultiExitOutput:
        stages = self.backbone.stage_features(x)
        teacher_feat = stages[-1]
        student_feats = []
        for i, stage_idx in enumerate(self._exit_stages):
            adapted = self.adapters[i](stages[stage_idx])
            if adapted.shape != teacher_feat.shape:
                raise ShapeError(
                    f"student exit {i}: adapted features {tuple(adapted.shape)} do not match "
                    f"teacher features {tuple(teacher_feat.shape)}"
                )
            student_feats.append(adapted)

        pooled = [self._pool(f) for f in student_feats]
        teacher_pooled = self._pool(teacher_feat)
        embeddings = [l2_normalize(self.heads[i](h)) for i, h in enumerate(pooled)]
        teacher_embedding = l2_normalize(self.heads[-1](teacher_pooled))
        logits = [self.banks[i](z) for i, z in enumerate(embeddings)]
        teacher_logits = self.banks[-1](teacher_embedding)
        return MultiExitOutput(
            student_features=student_feats,
            teacher_features=teacher_feat,
            student_pooled=pooled,
            teacher_pooled=teacher_pooled,
            student_embeddings=embeddings,
            teacher_embeddings=teacher_embedding,
            student_logits=logits,
            teacher_logits=teacher_logits,
        )


def init_model(config: ModelConfig, seed: int) -> MultiExitEncoder:
    """Build a model with all parameters (and prototype rows) seeded."""
    torch.manual_seed(seed)
    return MultiExitEncoder(config)
