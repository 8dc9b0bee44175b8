"""Flow-matching training loop: straight-path targets, Adam and EMA weights."""

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from flowsdf.flow import interpolate_state, training_target
from flowsdf.model import Architecture, VectorField, save_checkpoint
from flowsdf.optim import AdamState, adam_step, ema_update, warmup_decay
from flowsdf.sdf import binary_field, normalize_sdf, sdf_from_mask

log = logging.getLogger(__name__)

REPRESENTATIONS = ("sdf", "binary")


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 1
    max_steps: int = 0  # 0: run all epochs
    ema_decay: float = 0.9999
    ema_warmup: bool = True
    crop_size: int = 0  # 0: no cropping
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0: only at the end
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.ema_decay < 1:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.max_steps < 0 or self.crop_size < 0:
            raise ValueError("max_steps and crop_size must be non-negative")


def mask_to_field(mask, representation="sdf", delta=5.0):
    """Training target for one 2-D mask: normalised SDF or {-1, +1} binary field."""
    if representation == "sdf":
        return normalize_sdf(sdf_from_mask(mask, delta), delta)
    if representation == "binary":
        return binary_field(mask)
    raise ValueError(f"unknown representation {representation!r}")


def prepare_fields(masks, representation="sdf", delta=5.0):
    """(N, 1, H, W) binary masks -> float32 fields of the same shape."""
    return np.stack([mask_to_field(m[0], representation, delta)[None] for m in masks]).astype(np.float32)


def augment(image, target, rng, crop_size=0):
    """Shared random crop and random horizontal/vertical flips of a (C, H, W) pair."""
    _, h, w = image.shape
    if target.shape[-2:] != (h, w):
        raise ValueError("image and target must share spatial dimensions")
    size = crop_size or min(h, w)
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds image size {h}x{w}")
    i = int(rng.integers(0, h - size + 1))
    j = int(rng.integers(0, w - size + 1))
    image, target = image[:, i:i + size, j:j + size], target[:, i:i + size, j:j + size]
    if rng.random() < 0.5:
        image, target = image[:, :, ::-1], target[:, :, ::-1]
    if rng.random() < 0.5:
        image, target = image[:, ::-1, :], target[:, ::-1, :]
    return np.ascontiguousarray(image), np.ascontiguousarray(target)


@dataclass
class TrainResult:
    model: VectorField
    ema: dict
    epoch_losses: list
    steps: int
    first_loss: float


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(images, fields, cfg, out_dir=None, config_text=None):
    """Fit the vector field to (image, field) pairs.

    ``images`` is (N, C, H, W) and ``fields`` the matching (N, 1, H, W)
    normalised targets. When ``out_dir`` is given, writes ``loss.csv``,
    ``checkpoint.fsdf`` (latest) and ``best.fsdf`` (lowest epoch loss).
    """
    images = np.asarray(images, np.float32)
    fields = np.asarray(fields, np.float32)
    if len(images) == 0 or len(images) != len(fields):
        raise ValueError("need a non-empty dataset with matching images and fields")
    rng = np.random.default_rng(cfg.seed)
    model = VectorField.init(cfg.seed, cfg.arch)
    params = model.params
    ema = {k: v.copy() for k, v in params.items()}
    state = AdamState()
    writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "loss.csv"), "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(["epoch", "step", "loss"])

    def checkpoint(name):
        save_checkpoint(os.path.join(out_dir, name), params, ema, config_text)

    epoch_losses, first_loss, best = [], None, np.inf
    try:
        for epoch in range(cfg.epochs):
            losses = []
            for b, idx in enumerate(_batches(rng, len(images), cfg.batch_size)):
                pairs = [augment(images[i], fields[i], rng, cfg.crop_size) for i in idx]
                x = np.stack([p[0] for p in pairs])
                m1 = np.stack([p[1] for p in pairs])
                t = rng.random(len(idx))
                m0 = rng.standard_normal(m1.shape).astype(np.float32)
                m_t = interpolate_state(m0, m1, t.astype(np.float32))
                loss, grads = model.loss_and_grads(m_t, x, t, training_target(m0, m1))
                if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                    raise NumericalError(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
                if first_loss is None:
                    first_loss = loss
                adam_step(params, grads, state, lr=cfg.learning_rate)
                decay = warmup_decay(cfg.ema_decay, state.step) if cfg.ema_warmup else cfg.ema_decay
                ema_update(ema, params, decay)
                losses.append(loss)
                if cfg.max_steps and state.step >= cfg.max_steps:
                    break
            mean_loss = float(np.mean(losses))
            epoch_losses.append(mean_loss)
            log.info("epoch %d step %d loss %.6f", epoch, state.step, mean_loss)
            if writer is not None:
                writer.writerow([epoch, state.step, repr(mean_loss)])
                if mean_loss < best:
                    best = mean_loss
                    checkpoint("best.fsdf")
                if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                    checkpoint("checkpoint.fsdf")
            if cfg.max_steps and state.step >= cfg.max_steps:
                break
        if out_dir is not None:
            checkpoint("checkpoint.fsdf")
    finally:
        if writer is not None:
            log_fh.close()
    return TrainResult(model, ema, epoch_losses, state.step, first_loss)
