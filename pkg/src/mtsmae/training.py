"""Optimization recipes, training loops and checkpointing.

Pretraining: AdamW, cosine decay by global step, base lr scaled linearly by
batch size / 256, masked-reconstruction MSE. Fine-tuning: Adam, lr halving
per epoch (exponential) or cosine, early stopping on validation loss. Both
loops are deterministic for a fixed seed.
"""

from __future__ import annotations

import io
import json
import math
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import masking
from . import model as mdl
from .autodiff import Tensor
from .exceptions import ConfigError, DimensionError, TrainingAborted
from .params import named_parameters, zero_grads


@dataclass
class TrainConfig:
    phase: str = "pretrain"           # pretrain | finetune
    base_lr: float = 1e-3             # pretrain (scaled by batch/256); finetune: used as-is
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)
    batch_size: int = 64
    epochs: int = 40
    warmup: int = 0
    schedule: str = "cosine"          # cosine | exponential
    patience: int = 3
    mask_ratio: float = 0.85
    grad_clip: float | None = None
    adam_eps: float = 1e-8
    seed: int = 0

    @classmethod
    def pretrain_defaults(cls, **overrides) -> "TrainConfig":
        cfg = cls(phase="pretrain", base_lr=1e-3, weight_decay=0.05,
                  betas=(0.9, 0.95), batch_size=64, schedule="cosine",
                  mask_ratio=0.85)
        return _replace(cfg, overrides)

    @classmethod
    def finetune_defaults(cls, **overrides) -> "TrainConfig":
        cfg = cls(phase="finetune", base_lr=1e-4, weight_decay=0.0,
                  betas=(0.9, 0.999), batch_size=32, schedule="exponential",
                  patience=3, epochs=50)
        return _replace(cfg, overrides)


def _replace(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown training option {k!r}")
        setattr(cfg, k, v)
    return cfg


# --- learning-rate rules ---

def scaled_lr(base_lr: float, batch_size: int) -> float:
    """Linear scaling rule: base_lr * batch_size / 256."""
    return base_lr * batch_size / 256.0


def cosine_lr(step: int, total_steps: int, lr_max: float) -> float:
    if total_steps <= 0:
        raise ConfigError(f"total_steps must be positive, got {total_steps}")
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def exponential_lr(epoch: int, lr0: float) -> float:
    """Halves every epoch; epoch 0 runs at lr0."""
    return lr0 * 0.5 ** epoch


# --- optimizers (functional; state mutated in place) ---

def adam_step(params: dict[str, Tensor], state: dict, lr: float,
              betas: tuple[float, float], eps: float = 1e-8,
              weight_decay: float = 0.0, decoupled: bool = False) -> None:
    b1, b2 = betas
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient in {name}")
        st = state.setdefault(name, {"m": np.zeros_like(p.data),
                                     "v": np.zeros_like(p.data)})
        if decoupled and weight_decay > 0:
            p.data = p.data - lr * weight_decay * p.data
        st["m"] = b1 * st["m"] + (1 - b1) * g
        st["v"] = b2 * st["v"] + (1 - b2) * g * g
        mhat = st["m"] / (1 - b1 ** t)
        vhat = st["v"] / (1 - b2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


def adamw_step(params, state, lr, betas, weight_decay, eps: float = 1e-8) -> None:
    adam_step(params, state, lr, betas, eps=eps,
              weight_decay=weight_decay, decoupled=True)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> None:
    total = math.sqrt(sum(float((p.grad ** 2).sum())
                          for p in params.values() if p.grad is not None))
    if total > max_norm > 0:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale


# --- losses ---

def masked_mse_loss(pred: Tensor, targets_masked: np.ndarray,
                    plan: masking.MaskPlan) -> Tensor:
    """MSE over masked patches only, averaged over all masked elements."""
    if len(plan.masked_ids) == 0:
        raise ConfigError("masked loss undefined with an empty masked set")
    if targets_masked.shape != (len(plan.masked_ids), pred.data.shape[1]):
        raise DimensionError(
            f"target shape {targets_masked.shape} != "
            f"({len(plan.masked_ids)}, {pred.data.shape[1]})")
    diff = ad.gather_rows(pred, plan.masked_ids) - targets_masked.astype(pred.data.dtype)
    return ad.mean_all(ad.square(diff))


def forecast_mse_loss(pred: Tensor, y_true: np.ndarray) -> Tensor:
    return ad.mean_all(ad.square(pred - y_true.astype(pred.data.dtype)))


# --- checkpoint file format ---
# magic, u32 version, u8 dtype tag (4=f32, 8=f64), u32 meta-json length,
# meta json (config snapshot, epoch, rng state), u32 record count, then per
# tensor: u16 name length, name utf-8, u8 rank, u32 dims, raw little-endian
# buffer. Round trips bitwise.

_MAGIC = b"MTSMAECK"
_DTYPE_TAG = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict
    epoch: int
    rng_state: dict | None = None

    @classmethod
    def from_params(cls, params, config: dict, epoch: int,
                    rng: np.random.Generator | None = None) -> "Checkpoint":
        tensors = {name: t.data.copy() for name, t in named_parameters(params).items()}
        state = None
        if rng is not None:
            state = json.loads(json.dumps(rng.bit_generator.state))
        return cls(tensors=tensors, config=config, epoch=epoch, rng_state=state)

    def save(self, path) -> None:
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<I", 1))
        itemsize = next(iter(self.tensors.values())).dtype.itemsize if self.tensors else 4
        buf.write(struct.pack("<B", itemsize))
        meta = json.dumps({"config": self.config, "epoch": self.epoch,
                           "rng_state": self.rng_state},
                          sort_keys=True).encode()
        buf.write(struct.pack("<I", len(meta)))
        buf.write(meta)
        buf.write(struct.pack("<I", len(self.tensors)))
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype=_DTYPE_TAG[itemsize])
            nb = name.encode()
            buf.write(struct.pack("<H", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                buf.write(struct.pack("<I", dim))
            buf.write(arr.tobytes())
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            raw = fh.read()
        buf = io.BytesIO(raw)
        if buf.read(8) != _MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", buf.read(4))
        if version != 1:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        (itemsize,) = struct.unpack("<B", buf.read(1))
        dtype = _DTYPE_TAG[itemsize]
        (meta_len,) = struct.unpack("<I", buf.read(4))
        meta = json.loads(buf.read(meta_len))
        (count,) = struct.unpack("<I", buf.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", buf.read(2))
            name = buf.read(name_len).decode()
            (rank,) = struct.unpack("<B", buf.read(1))
            shape = struct.unpack(f"<{rank}I", buf.read(4 * rank)) if rank else ()
            size = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(buf.read(size * itemsize), dtype=dtype).reshape(shape)
            tensors[name] = arr.copy()
        return cls(tensors=tensors, config=meta["config"], epoch=meta["epoch"],
                   rng_state=meta.get("rng_state"))


class TrainLog:
    """Append-only CSV: epoch, split, loss, lr, wall_ms."""

    def __init__(self, path=None):
        self.path = path
        self.rows: list[tuple] = []
        if path is not None:
            with open(path, "w") as fh:
                fh.write("epoch,split,loss,lr,wall_ms\n")

    def add(self, epoch: int, split: str, loss: float, lr: float, wall_ms: int):
        self.rows.append((epoch, split, loss, lr, wall_ms))
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(f"{epoch},{split},{loss!r},{lr!r},{wall_ms}\n")


class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int = 3):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def _batches(n: int, batch_size: int, order: np.ndarray):
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def pretrain(model_cfg: mdl.ModelConfig, train_cfg: TrainConfig, dataset,
             log: TrainLog | None = None, params: mdl.PretrainParams | None = None):
    """Masked-reconstruction pretraining. Returns (final Checkpoint,
    per-epoch mean losses)."""
    rng = np.random.default_rng(train_cfg.seed)
    if params is None:
        params = mdl.init_pretrain_params(model_cfg, rng)
    flat = named_parameters(params)
    state: dict = {}
    n = len(dataset)
    if n == 0:
        raise ConfigError("pretraining dataset is empty")
    lr_max = scaled_lr(train_cfg.base_lr, train_cfg.batch_size)
    steps_per_epoch = (n + train_cfg.batch_size - 1) // train_cfg.batch_size
    total_steps = train_cfg.epochs * steps_per_epoch
    L = model_cfg.n_patches

    epoch_losses: list[float] = []
    step = 0
    for epoch in range(train_cfg.epochs):
        t0 = time.monotonic()
        order = rng.permutation(n)
        losses = []
        for batch in _batches(n, train_cfg.batch_size, order):
            zero_grads(params)
            loss = None
            for i in batch:
                sample = dataset[int(i)]
                plan = masking.sample_mask(L, train_cfg.mask_ratio, rng)
                recon = mdl.pretrain_forward(sample.x_enc, sample.enc_marks, plan,
                                             params, model_cfg, train=True, rng=rng)
                targets = mdl.reconstruction_targets(sample.x_enc, plan, model_cfg.p)
                term = masked_mse_loss(recon, targets, plan)
                loss = term if loss is None else loss + term
            loss = loss * (1.0 / len(batch))
            if not np.isfinite(loss.data):
                raise TrainingAborted(
                    f"non-finite pretraining loss at epoch {epoch}, step {step}")
            loss.backward()
            if train_cfg.grad_clip:
                clip_gradients(flat, train_cfg.grad_clip)
            lr = (cosine_lr(step, total_steps, lr_max)
                  if train_cfg.schedule == "cosine"
                  else exponential_lr(epoch, lr_max))
            adamw_step(flat, state, lr, train_cfg.betas,
                       train_cfg.weight_decay, eps=train_cfg.adam_eps)
            losses.append(float(loss.data))
            step += 1
        mean_loss = float(np.mean(losses))
        epoch_losses.append(mean_loss)
        if log is not None:
            log.add(epoch, "pretrain", mean_loss, lr,
                    int((time.monotonic() - t0) * 1000))

    config_snapshot = asdict(model_cfg)
    ckpt = Checkpoint.from_params(params, config_snapshot, train_cfg.epochs - 1, rng)
    return ckpt, epoch_losses


def _finetune_epoch_loss(params, model_cfg, dataset, indices) -> float:
    total = 0.0
    for i in indices:
        s = dataset[int(i)]
        pred = mdl.finetune_forward(s.x_enc, s.enc_marks, s.x_label, s.label_marks,
                                    s.y_marks, params, model_cfg)
        total += float(np.mean((pred.data - s.y_true) ** 2))
    return total / len(indices)


def finetune(model_cfg: mdl.ModelConfig, train_cfg: TrainConfig,
             train_set, val_set, init: Checkpoint | None = None,
             log: TrainLog | None = None):
    """Forecast fine-tuning with early stopping; `init` transfers the
    pretrained encoder and embedding. Returns (params, best Checkpoint,
    history rows)."""
    rng = np.random.default_rng(train_cfg.seed)
    params = mdl.init_finetune_params(model_cfg, rng)
    if init is not None:
        mdl.transfer_encoder(params, init.tensors)
    flat = named_parameters(params)
    state: dict = {}
    n = len(train_set)
    if n == 0:
        raise ConfigError("fine-tuning dataset is empty")
    lr_max = train_cfg.base_lr
    stopper = EarlyStopper(train_cfg.patience)
    best_ckpt = None
    history: list[dict] = []
    steps_per_epoch = (n + train_cfg.batch_size - 1) // train_cfg.batch_size
    total_steps = train_cfg.epochs * steps_per_epoch
    val_idx = np.arange(len(val_set)) if val_set is not None else None

    step = 0
    for epoch in range(train_cfg.epochs):
        t0 = time.monotonic()
        order = rng.permutation(n)
        train_losses = []
        for batch in _batches(n, train_cfg.batch_size, order):
            zero_grads(params)
            loss = None
            for i in batch:
                s = train_set[int(i)]
                pred = mdl.finetune_forward(s.x_enc, s.enc_marks, s.x_label,
                                            s.label_marks, s.y_marks, params,
                                            model_cfg, train=True, rng=rng)
                term = forecast_mse_loss(pred, s.y_true)
                loss = term if loss is None else loss + term
            loss = loss * (1.0 / len(batch))
            if not np.isfinite(loss.data):
                raise TrainingAborted(
                    f"non-finite fine-tuning loss at epoch {epoch}, step {step}")
            loss.backward()
            if train_cfg.grad_clip:
                clip_gradients(flat, train_cfg.grad_clip)
            lr = (cosine_lr(step, total_steps, lr_max)
                  if train_cfg.schedule == "cosine"
                  else exponential_lr(epoch, train_cfg.base_lr))
            adam_step(flat, state, lr, train_cfg.betas, eps=train_cfg.adam_eps,
                      weight_decay=train_cfg.weight_decay, decoupled=False)
            train_losses.append(float(loss.data))
            step += 1
        train_loss = float(np.mean(train_losses))
        wall = int((time.monotonic() - t0) * 1000)
        if log is not None:
            log.add(epoch, "train", train_loss, lr, wall)

        row = {"epoch": epoch, "train_loss": train_loss, "lr": lr}
        if val_set is not None and len(val_set):
            val_loss = _finetune_epoch_loss(params, model_cfg, val_set, val_idx)
            row["val_loss"] = val_loss
            if log is not None:
                log.add(epoch, "val", val_loss, lr, 0)
            improved = val_loss < stopper.best
            should_stop = stopper.update(epoch, val_loss)
            if improved:
                best_ckpt = Checkpoint.from_params(params, asdict(model_cfg),
                                                   epoch, rng)
            history.append(row)
            if should_stop:
                break
        else:
            history.append(row)

    if best_ckpt is None:
        best_ckpt = Checkpoint.from_params(params, asdict(model_cfg),
                                           history[-1]["epoch"] if history else 0, rng)
    return params, best_ckpt, history


def load_finetune_params(ckpt: Checkpoint, model_cfg: mdl.ModelConfig) -> mdl.FinetuneParams:
    """Rebuild fine-tune parameters from a checkpoint (shapes must match)."""
    params = mdl.init_finetune_params(model_cfg, np.random.default_rng(0))
    own = named_parameters(params)
    if set(own) != set(ckpt.tensors):
        missing = set(own) ^ set(ckpt.tensors)
        raise DimensionError(f"checkpoint does not match model: {sorted(missing)[:5]}")
    for name, t in own.items():
        src = ckpt.tensors[name]
        if tuple(src.shape) != tuple(t.data.shape):
            raise DimensionError(
                f"checkpoint tensor {name} has shape {tuple(src.shape)}, "
                f"model expects {tuple(t.data.shape)}")
        t.data = src.astype(t.data.dtype, copy=True)
    return params
