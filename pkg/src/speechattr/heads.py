"""Prediction heads over frozen speech embeddings.

Three architectures share one interface: an MLP and a 32-layer residual CNN
consume the pooled embedding, a bidirectional LSTM with additive attention
consumes the frame sequence. Initialization is seeded fan-in uniform for
weights (bound 1/sqrt(fan_in)), zeros for biases, ones/zeros for
normalization scale/shift, so builds are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

ARCHITECTURES = ("mlp", "resnet32", "bilstm")


@dataclass(frozen=True)
class TaskSpec:
    attribute: str
    kind: str  # "regression" | "classification"
    num_classes: Optional[int] = None
    input_kind: str = "pooled"  # "pooled" | "sequence"

    def __post_init__(self):
        if self.kind not in ("regression", "classification"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification":
            if self.num_classes is None or self.num_classes < 2:
                raise ValueError("classification needs num_classes >= 2")
        elif self.num_classes not in (None, 1):
            raise ValueError("regression has a single output")
        if self.input_kind not in ("pooled", "sequence"):
            raise ValueError(f"unknown input kind {self.input_kind!r}")

    @property
    def output_dim(self) -> int:
        return self.num_classes if self.kind == "classification" else 1


def _init_parameters(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    norm_scales = set()
    for mod in module.modules():
        if isinstance(mod, (nn.BatchNorm2d, nn.LayerNorm)):
            norm_scales.add(id(mod.weight))
    for name, p in module.named_parameters():
        with torch.no_grad():
            if id(p) in norm_scales:
                p.fill_(1.0)
            elif p.dim() == 1:
                p.zero_()
            else:
                fan_in = int(np.prod(p.shape[1:]))
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=gen)


class MlpHead(nn.Module):
    """input -> 128 -> 64 -> output, ReLU + dropout after each hidden layer."""

    architecture = "mlp"

    def __init__(self, input_dim: int, task: TaskSpec, dropout: float = 0.3, seed: int = 0):
        super().__init__()
        if task.input_kind != "pooled":
            raise ValueError("mlp consumes pooled embeddings")
        if input_dim <= 0:
            raise ValueError(f"input_dim must be positive, got {input_dim}")
        self.task = task
        self.hyper = {"input_dim": input_dim, "dropout": dropout, "seed": seed}
        self.fc1 = nn.Linear(input_dim, 128)
        self.fc2 = nn.Linear(128, 64)
        self.out = nn.Linear(64, task.output_dim)
        self.drop = nn.Dropout(dropout)
        _init_parameters(self, seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.drop(torch.relu(self.fc1(x)))
        x = self.drop(torch.relu(self.fc2(x)))
        return self.out(x)


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with batch norm; projection skip when downsampling."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.shortcut(x))


class ResNetHead(nn.Module):
    """CIFAR-style residual network over the pooled embedding viewed as a 2-D map.

    Three stages of residual blocks with widths (16, 32, 64); the first block
    of stages 2 and 3 downsamples by stride 2. With 5 blocks per stage the
    weighted depth is 32: 31 convolutions plus the output layer.
    """

    architecture = "resnet32"
    stage_channels = (16, 32, 64)

    def __init__(
        self,
        input_dim: int,
        task: TaskSpec,
        map_shape: Optional[tuple[int, int]] = None,
        blocks_per_stage: int = 5,
        seed: int = 0,
    ):
        super().__init__()
        if task.input_kind != "pooled":
            raise ValueError("resnet32 consumes pooled embeddings")
        if map_shape is None:
            map_shape = (24, 32) if input_dim == 768 else _near_square(input_dim)
        if map_shape[0] * map_shape[1] != input_dim:
            raise ValueError(
                f"input dim {input_dim} does not factor into map shape {map_shape}"
            )
        self.task = task
        self.map_shape = tuple(map_shape)
        self.blocks_per_stage = blocks_per_stage
        self.hyper = {
            "input_dim": input_dim,
            "map_shape": list(self.map_shape),
            "blocks_per_stage": blocks_per_stage,
            "seed": seed,
        }
        self.conv0 = nn.Conv2d(1, 16, 3, stride=1, padding=1, bias=False)
        self.bn0 = nn.BatchNorm2d(16)
        stages = []
        in_ch = 16
        for stage_idx, ch in enumerate(self.stage_channels):
            blocks = []
            for b in range(blocks_per_stage):
                stride = 2 if stage_idx > 0 and b == 0 else 1
                blocks.append(ResidualBlock(in_ch, ch, stride))
                in_ch = ch
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.out = nn.Linear(self.stage_channels[-1], task.output_dim)
        _init_parameters(self, seed)

    @property
    def num_blocks(self) -> int:
        return len(self.stage_channels) * self.blocks_per_stage

    @property
    def depth(self) -> int:
        # Initial conv + 2 convs per block + the output layer; projection
        # shortcuts are not counted, per the usual depth convention.
        return 1 + 2 * self.num_blocks + 1

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = self.map_shape
        x = x.view(x.shape[0], 1, h, w)
        x = torch.relu(self.bn0(self.conv0(x)))
        for stage in self.stages:
            x = stage(x)
        x = x.mean(dim=(2, 3))
        return self.out(x)


def _near_square(n: int) -> tuple[int, int]:
    h = int(math.isqrt(n))
    while h > 1 and n % h != 0:
        h -= 1
    return (h, n // h)


class BiLstmHead(nn.Module):
    """Three bidirectional LSTM layers with layer norm, dropout and residuals,
    followed by additive attention over time."""

    architecture = "bilstm"
    num_layers = 3

    def __init__(
        self,
        input_dim: int,
        task: TaskSpec,
        hidden: int = 128,
        dropout: float = 0.2,
        seed: int = 0,
    ):
        super().__init__()
        if task.input_kind != "sequence":
            raise ValueError("bilstm consumes frame sequences")
        if hidden <= 0:
            raise ValueError(f"hidden size must be positive, got {hidden}")
        self.task = task
        self.hidden = hidden
        self.hyper = {"input_dim": input_dim, "hidden": hidden, "dropout": dropout, "seed": seed}
        width = 2 * hidden
        self.lstms = nn.ModuleList(
            nn.LSTM(input_dim if i == 0 else width, hidden, batch_first=True, bidirectional=True)
            for i in range(self.num_layers)
        )
        self.norms = nn.ModuleList(nn.LayerNorm(width) for _ in range(self.num_layers))
        self.res_proj = nn.Linear(input_dim, width, bias=False) if input_dim != width else nn.Identity()
        self.drop = nn.Dropout(dropout)
        self.att_proj = nn.Linear(width, width)
        self.att_score = nn.Linear(width, 1, bias=False)
        self.out = nn.Linear(width, task.output_dim)
        _init_parameters(self, seed)

    def forward(self, x: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
        b, t, _ = x.shape
        if lengths is None:
            lengths = torch.full((b,), t, dtype=torch.long)
        for i, (lstm, norm) in enumerate(zip(self.lstms, self.norms)):
            packed = pack_padded_sequence(
                x, lengths.cpu(), batch_first=True, enforce_sorted=False
            )
            out, _ = lstm(packed)
            out, _ = pad_packed_sequence(out, batch_first=True, total_length=t)
            out = self.drop(norm(out))
            residual = self.res_proj(x) if i == 0 else x
            x = out + residual
        scores = self.att_score(torch.tanh(self.att_proj(x))).squeeze(-1)
        mask = torch.arange(t, device=x.device)[None, :] >= lengths[:, None]
        scores = scores.masked_fill(mask, float("-inf"))
        weights = torch.softmax(scores, dim=1)
        attended = torch.einsum("bt,btd->bd", weights, x)
        return self.out(attended)

    def attention_weights(self, x: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Normalized per-timestep attention weights (for inspection/tests)."""
        b, t, _ = x.shape
        if lengths is None:
            lengths = torch.full((b,), t, dtype=torch.long)
        was_training = self.training
        self.eval()
        with torch.no_grad():
            h = x
            for i, (lstm, norm) in enumerate(zip(self.lstms, self.norms)):
                packed = pack_padded_sequence(h, lengths.cpu(), batch_first=True, enforce_sorted=False)
                out, _ = lstm(packed)
                out, _ = pad_packed_sequence(out, batch_first=True, total_length=t)
                out = norm(out)
                h = out + (self.res_proj(x) if i == 0 else h)
            scores = self.att_score(torch.tanh(self.att_proj(h))).squeeze(-1)
            mask = torch.arange(t)[None, :] >= lengths[:, None]
            weights = torch.softmax(scores.masked_fill(mask, float("-inf")), dim=1)
        if was_training:
            self.train()
        return weights


Model = MlpHead | ResNetHead | BiLstmHead


def build_mlp(input_dim: int, task: TaskSpec, dropout: float = 0.3, seed: int = 0) -> MlpHead:
    return MlpHead(input_dim, task, dropout=dropout, seed=seed)


def build_resnet32(
    task: TaskSpec,
    input_dim: int = 768,
    map_shape: Optional[tuple[int, int]] = None,
    blocks_per_stage: int = 5,
    seed: int = 0,
) -> ResNetHead:
    return ResNetHead(input_dim, task, map_shape=map_shape, blocks_per_stage=blocks_per_stage, seed=seed)


def build_bilstm(
    input_dim: int, task: TaskSpec, hidden: int = 128, dropout: float = 0.2, seed: int = 0
) -> BiLstmHead:
    return BiLstmHead(input_dim, task, hidden=hidden, dropout=dropout, seed=seed)


def build_head(architecture: str, input_dim: int, task: TaskSpec, seed: int = 0, **hyper) -> Model:
    if architecture == "mlp":
        return build_mlp(input_dim, task, seed=seed, **hyper)
    if architecture == "resnet32":
        return build_resnet32(task, input_dim=input_dim, seed=seed, **hyper)
    if architecture == "bilstm":
        return build_bilstm(input_dim, task, seed=seed, **hyper)
    raise ValueError(f"unknown architecture {architecture!r}; expected one of {ARCHITECTURES}")


def task_for(attribute: str, architecture: str, num_classes: Optional[int] = None) -> TaskSpec:
    kind = "regression" if attribute == "age" else "classification"
    input_kind = "sequence" if architecture == "bilstm" else "pooled"
    return TaskSpec(attribute=attribute, kind=kind, num_classes=num_classes, input_kind=input_kind)


def param_count(model: nn.Module) -> int:
    """Exact number of scalar trainable parameters."""
    return sum(p.numel() for p in model.parameters())


# --- batch assembly and functional forward/gradient ------------------------

def batch_pooled(vectors: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.stack(vectors), dtype=dtype)


def batch_sequences(
    sequences: Sequence[np.ndarray], dtype=torch.float32
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad variable-length (T_i, D) arrays into (B, T_max, D) plus lengths."""
    lengths = torch.tensor([s.shape[0] for s in sequences], dtype=torch.long)
    t_max = int(lengths.max())
    d = sequences[0].shape[1]
    padded = torch.zeros(len(sequences), t_max, d, dtype=dtype)
    for i, s in enumerate(sequences):
        padded[i, : s.shape[0]] = torch.as_tensor(np.asarray(s), dtype=dtype)
    return padded, lengths


def forward(model: nn.Module, batch, train: bool = False) -> torch.Tensor:
    """Run a batch through a head; evaluation mode unless train=True.

    ``batch`` is a tensor / (B, D) array for pooled heads, or a
    (padded tensor, lengths) pair or list of (T_i, D) arrays for sequence heads.
    """
    model.train(train)
    ctx = torch.enable_grad() if train else torch.no_grad()
    with ctx:
        if model.task.input_kind == "sequence":
            if isinstance(batch, (list, tuple)) and not torch.is_tensor(batch[0]):
                batch = batch_sequences(batch)
            x, lengths = batch
            out = model(x, lengths)
        else:
            if not torch.is_tensor(batch):
                batch = batch_pooled(np.asarray(batch))
            if batch.ndim != 2 or batch.shape[1] != model.hyper["input_dim"]:
                raise ValueError(
                    f"expected (B, {model.hyper['input_dim']}) input, got {tuple(batch.shape)}"
                )
            out = model(batch)
    if not torch.isfinite(out).all():
        raise FloatingPointError("non-finite model output")
    return out


def gradient(
    model: nn.Module,
    batch,
    targets: torch.Tensor,
    loss_fn,
) -> dict[str, torch.Tensor]:
    """Gradients of the scalar batch loss w.r.t. every parameter (training mode)."""
    model.train(True)
    model.zero_grad(set_to_none=True)
    if model.task.input_kind == "sequence":
        x, lengths = batch
        out = model(x, lengths)
    else:
        out = model(batch)
    loss = loss_fn(out, targets)
    loss.backward()
    return {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
