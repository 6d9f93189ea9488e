"""Training loop with early stopping, plateau LR decay, and checkpointing.

Age targets are z-scored with train-split statistics; the regression loss is
the mean absolute deviation so the training objective matches the reported
error metric. Classification uses cross-entropy with optional
inverse-frequency class weights. Validation is scored with MAE in years
(regression) or 1 - macro-F1 (classification), lower is better for both.

Checkpoint file (little-endian): magic ``SATT``, version u32=1, a
length-prefixed (u32) UTF-8 JSON metadata block, then all float tensors in
flat enumeration order as float32.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import LabelSpace, SegmentRecord
from .embedstore import EmbeddingStore, pool_mean
from .heads import (
    TaskSpec,
    batch_pooled,
    batch_sequences,
    build_head,
    param_count,
)
from .metrics import PredictionSet, macro_f1, mae

CHECKPOINT_MAGIC = b"SATT"
CHECKPOINT_VERSION = 1
IMPROVEMENT_TOLERANCE = 1e-8


class TrainingError(RuntimeError):
    """Raised when training cannot proceed (bad inputs, diverged loss)."""


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    batch_size: int = 64
    initial_lr: float = 1e-3
    optimizer: str = "adaptive-moment"  # or "plain-sgd"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    early_stop_patience: int = 20
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_lr: float = 1e-6
    class_weighting: str = "inverse-frequency"  # or "none"
    seed: int = 0

    def __post_init__(self):
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not (0 < self.plateau_factor < 1):
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.optimizer not in ("adaptive-moment", "plain-sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.class_weighting not in ("none", "inverse-frequency"):
            raise ValueError(f"unknown class weighting {self.class_weighting!r}")

    def to_dict(self) -> dict:
        return {
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "initial_lr": self.initial_lr,
            "optimizer": self.optimizer,
            "adam_betas": list(self.adam_betas),
            "adam_eps": self.adam_eps,
            "early_stop_patience": self.early_stop_patience,
            "plateau_patience": self.plateau_patience,
            "plateau_factor": self.plateau_factor,
            "min_lr": self.min_lr,
            "class_weighting": self.class_weighting,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return TrainConfig(**d)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = "max_epochs"  # or "early_stop"

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_metric,lr,seconds"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_metric!r},{r.lr!r},{r.seconds:.3f}")
        return "\n".join(lines) + "\n"


# --- losses ----------------------------------------------------------------

def loss_regression(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute deviation over the batch."""
    if pred.numel() == 0:
        raise ValueError("empty batch")
    return torch.mean(torch.abs(pred.reshape(-1) - target.reshape(-1)))


def loss_classification(
    logits: torch.Tensor, target: torch.Tensor, weights: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Weighted mean cross-entropy, stabilized via log-softmax."""
    if logits.numel() == 0:
        raise ValueError("empty batch")
    k = logits.shape[-1]
    if target.numel() and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"target class index out of range [0, {k})")
    return nn.functional.cross_entropy(logits, target, weight=weights)


def inverse_frequency_weights(labels: Sequence[int], num_classes: int) -> torch.Tensor:
    """Weight class k by n / (K_present * n_k); absent classes get weight 0."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=num_classes).astype(float)
    present = counts > 0
    weights = np.zeros(num_classes)
    weights[present] = len(labels) / (present.sum() * counts[present])
    return torch.as_tensor(weights, dtype=torch.float32)


# --- scheduler / stopping state -------------------------------------------

@dataclass
class PlateauState:
    """Halve (by ``factor``) the learning rate after ``patience`` consecutive
    non-improving epochs, never below ``min_lr``."""

    lr: float
    patience: int = 5
    factor: float = 0.5
    min_lr: float = 1e-6
    best: Optional[float] = None
    bad_epochs: int = 0

    def step(self, val_metric: float) -> float:
        if self.best is None or val_metric < self.best - IMPROVEMENT_TOLERANCE:
            self.best = val_metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


@dataclass
class EarlyStopState:
    """Stop after ``patience`` consecutive epochs without a new best metric."""

    patience: int = 20
    best: Optional[float] = None
    best_epoch: int = 0
    bad_epochs: int = 0
    epoch: int = 0

    def step(self, val_metric: float) -> bool:
        self.epoch += 1
        if self.best is None or val_metric < self.best - IMPROVEMENT_TOLERANCE:
            self.best = val_metric
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


# --- normalization ---------------------------------------------------------

@dataclass(frozen=True)
class AgeNormalization:
    mean: float
    std: float

    def normalize(self, ages: np.ndarray) -> np.ndarray:
        return (np.asarray(ages, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    @staticmethod
    def fit(ages: Sequence[float]) -> "AgeNormalization":
        arr = np.asarray(ages, dtype=np.float64)
        std = float(arr.std())
        return AgeNormalization(mean=float(arr.mean()), std=std if std > 0 else 1.0)


# --- checkpoints -----------------------------------------------------------

@dataclass
class Checkpoint:
    model: nn.Module
    config: TrainConfig
    label_classes: Optional[tuple[str, ...]]
    age_norm: Optional[AgeNormalization]
    best_val_metric: float

    @property
    def label_space(self) -> Optional[LabelSpace]:
        if self.label_classes is None:
            return None
        return LabelSpace(attribute=self.model.task.attribute, classes=self.label_classes)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    model = ckpt.model
    float_tensors = []
    int_buffers = {}
    for name, p in model.named_parameters():
        float_tensors.append((name, "param", p.detach()))
    for name, b in model.named_buffers():
        if b.is_floating_point():
            float_tensors.append((name, "buffer", b.detach()))
        else:
            int_buffers[name] = b.tolist()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": model.architecture,
        "hyper": model.hyper,
        "task": {
            "attribute": model.task.attribute,
            "kind": model.task.kind,
            "num_classes": model.task.num_classes,
            "input_kind": model.task.input_kind,
        },
        "config": ckpt.config.to_dict(),
        "label_classes": list(ckpt.label_classes) if ckpt.label_classes else None,
        "age_norm": (
            {"mean": ckpt.age_norm.mean, "std": ckpt.age_norm.std} if ckpt.age_norm else None
        ),
        "best_val_metric": ckpt.best_val_metric,
        "tensors": [
            {"name": name, "kind": kind, "shape": list(t.shape)}
            for name, kind, t in float_tensors
        ],
        "int_buffers": int_buffers,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, _, t in float_tensors:
            fh.write(t.to(torch.float32).contiguous().numpy().astype("<f4").tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if len(data) < 12 + meta_len:
        raise CheckpointError(f"{path}: truncated metadata block")
    meta = json.loads(data[12 : 12 + meta_len].decode("utf-8"))
    task = TaskSpec(**meta["task"])
    hyper = dict(meta["hyper"])
    input_dim = hyper.pop("input_dim")
    if "map_shape" in hyper:
        hyper["map_shape"] = tuple(hyper["map_shape"])
    seed = hyper.pop("seed", 0)
    model = build_head(meta["architecture"], input_dim, task, seed=seed, **hyper)
    offset = 12 + meta_len
    state = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(data):
            raise CheckpointError(f"{path}: truncated tensor payload at {entry['name']}")
        values = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset = end
        target = state.get(entry["name"]) if entry["kind"] == "param" else buffers.get(entry["name"])
        if target is None:
            raise CheckpointError(f"{path}: unknown tensor {entry['name']!r}")
        if tuple(target.shape) != shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {entry['name']!r}: "
                f"file {shape}, model {tuple(target.shape)}"
            )
        with torch.no_grad():
            target.copy_(torch.from_numpy(values.copy()))
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    for name, value in meta["int_buffers"].items():
        if name not in buffers:
            raise CheckpointError(f"{path}: unknown buffer {name!r}")
        with torch.no_grad():
            buffers[name].copy_(torch.as_tensor(value, dtype=buffers[name].dtype))
    age_norm = None
    if meta["age_norm"]:
        age_norm = AgeNormalization(**meta["age_norm"])
    return Checkpoint(
        model=model,
        config=TrainConfig.from_dict(meta["config"]),
        label_classes=tuple(meta["label_classes"]) if meta["label_classes"] else None,
        age_norm=age_norm,
        best_val_metric=meta["best_val_metric"],
    )


# --- data assembly ---------------------------------------------------------

def _inputs_for(
    records: Sequence[SegmentRecord], store: EmbeddingStore, input_kind: str
) -> list[np.ndarray]:
    missing = [r.segment_id for r in records if r.segment_id not in store]
    if missing:
        raise TrainingError(f"store is missing embeddings for segments: {missing[:5]}")
    if input_kind == "pooled":
        return [pool_mean(store.get_sequence(r.segment_id)).values for r in records]
    return [store.get_sequence(r.segment_id).frames for r in records]


def _targets_for(
    records: Sequence[SegmentRecord],
    attribute: str,
    label_space: Optional[LabelSpace],
    age_norm: Optional[AgeNormalization],
) -> np.ndarray:
    if attribute == "age":
        ages = np.array([r.age for r in records], dtype=np.float64)
        return age_norm.normalize(ages).astype(np.float32)
    return np.array([label_space.index_of(r.get(attribute)) for r in records], dtype=np.int64)


def _batched_forward(model, inputs: list[np.ndarray], batch_size: int) -> torch.Tensor:
    outs = []
    for i in range(0, len(inputs), batch_size):
        chunk = inputs[i : i + batch_size]
        if model.task.input_kind == "sequence":
            x, lengths = batch_sequences(chunk)
            model.eval()
            with torch.no_grad():
                outs.append(model(x, lengths))
        else:
            model.eval()
            with torch.no_grad():
                outs.append(model(batch_pooled(chunk)))
    return torch.cat(outs)


def predict_records(
    ckpt_or_model,
    records: Sequence[SegmentRecord],
    store: EmbeddingStore,
    batch_size: int = 256,
) -> PredictionSet:
    """Evaluation-mode predictions for records, as a scoreable PredictionSet."""
    if isinstance(ckpt_or_model, Checkpoint):
        model = ckpt_or_model.model
        label_space = ckpt_or_model.label_space
        age_norm = ckpt_or_model.age_norm
    else:
        raise TypeError("predict_records expects a Checkpoint")
    attribute = model.task.attribute
    inputs = _inputs_for(records, store, model.task.input_kind)
    out = _batched_forward(model, inputs, batch_size)
    if model.task.kind == "regression":
        y = np.array([r.age for r in records], dtype=np.float64)
        y_hat = age_norm.denormalize(out.reshape(-1).numpy())
        return PredictionSet(y=y, y_hat=y_hat, attribute=attribute, kind="regression")
    y = np.array([label_space.index_of(r.get(attribute)) for r in records], dtype=np.int64)
    y_hat = out.argmax(dim=1).numpy()
    return PredictionSet(y=y, y_hat=y_hat, attribute=attribute, kind="classification")


def _val_metric(model, ckpt: Checkpoint, records, store, batch_size: int) -> float:
    preds = predict_records(ckpt, records, store, batch_size)
    if model.task.kind == "regression":
        return mae(preds)
    return 1.0 - macro_f1(preds, model.task.num_classes)


# --- the training loop -----------------------------------------------------

def train(
    model: nn.Module,
    train_records: Sequence[SegmentRecord],
    val_records: Sequence[SegmentRecord],
    store: EmbeddingStore,
    label_space: Optional[LabelSpace],
    cfg: TrainConfig,
) -> tuple[Checkpoint, TrainLog]:
    """Optimize a head; returns the best-validation checkpoint and the log."""
    attribute = model.task.attribute
    if not train_records or not val_records:
        raise TrainingError("train and validation sets must both be non-empty")
    for recs, name in ((train_records, "train"), (val_records, "val")):
        lacking = [r.segment_id for r in recs if r.get(attribute) is None]
        if lacking:
            raise TrainingError(
                f"{name} records without {attribute!r} label: {lacking[:5]}"
            )
    if model.task.kind == "classification" and label_space is None:
        raise TrainingError("classification training requires a label space")

    torch.manual_seed(cfg.seed)
    shuffle_rng = np.random.Generator(np.random.PCG64(cfg.seed))

    age_norm = None
    if model.task.kind == "regression":
        age_norm = AgeNormalization.fit([r.age for r in train_records])

    inputs = _inputs_for(train_records, store, model.task.input_kind)
    targets = _targets_for(train_records, attribute, label_space, age_norm)
    targets_t = torch.as_tensor(targets)

    weights = None
    if model.task.kind == "classification" and cfg.class_weighting == "inverse-frequency":
        weights = inverse_frequency_weights(targets, model.task.num_classes)

    if model.task.kind == "regression":
        loss_fn = lambda out, tgt: loss_regression(out, tgt)
    else:
        loss_fn = lambda out, tgt: loss_classification(out, tgt, weights)

    if cfg.optimizer == "adaptive-moment":
        opt = torch.optim.Adam(
            model.parameters(), lr=cfg.initial_lr, betas=cfg.adam_betas, eps=cfg.adam_eps
        )
    else:
        opt = torch.optim.SGD(model.parameters(), lr=cfg.initial_lr)

    plateau = PlateauState(
        lr=cfg.initial_lr,
        patience=cfg.plateau_patience,
        factor=cfg.plateau_factor,
        min_lr=cfg.min_lr,
    )
    stopper = EarlyStopState(patience=cfg.early_stop_patience)
    log = TrainLog()
    best_state = None
    n = len(train_records)

    def current_ckpt(metric: float) -> Checkpoint:
        return Checkpoint(
            model=model,
            config=cfg,
            label_classes=label_space.classes if label_space else None,
            age_norm=age_norm,
            best_val_metric=metric,
        )

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        model.train(True)
        total_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            chunk = [inputs[i] for i in idx]
            tgt = targets_t[idx]
            if model.task.input_kind == "sequence":
                x, lengths = batch_sequences(chunk)
                out = model(x, lengths)
            else:
                out = model(batch_pooled(chunk))
            loss = loss_fn(out, tgt)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}"
                )
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total_loss += float(loss.detach())
            n_batches += 1

        val = _val_metric(model, current_ckpt(float("nan")), val_records, store, cfg.batch_size)
        improved = stopper.best is None or val < stopper.best - IMPROVEMENT_TOLERANCE
        stop = stopper.step(val)
        if improved:
            best_state = {
                "params": {k: v.detach().clone() for k, v in model.state_dict().items()},
                "metric": val,
            }
        new_lr = plateau.step(val)
        for group in opt.param_groups:
            group["lr"] = new_lr
        log.records.append(EpochRecord(
            epoch=epoch,
            train_loss=total_loss / max(n_batches, 1),
            val_metric=val,
            lr=new_lr,
            seconds=time.perf_counter() - t0,
        ))
        if stop:
            log.stop_reason = "early_stop"
            break
    else:
        log.stop_reason = "max_epochs"

    model.load_state_dict(best_state["params"])
    return current_ckpt(best_state["metric"]), log
