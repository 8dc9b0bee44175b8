"""Segmentation metrics, overlapping-patch inference and the ablation harnesses."""

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from flowsdf.sampler import SamplerConfig, ensemble_samples, ensemble_stats
from flowsdf.sdf import mask_from_sdf


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def confusion_counts(pred, gt):
    pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def f1(counts):
    denom = 2 * counts.tp + counts.fp + counts.fn
    return 1.0 if denom == 0 else 2 * counts.tp / denom


def iou(counts):
    denom = counts.tp + counts.fp + counts.fn
    return 1.0 if denom == 0 else counts.tp / denom


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    stride: int
    shape: tuple
    origins: tuple  # (row, col) of each window's top-left corner


def _axis_origins(length, patch, stride):
    origins = list(range(0, length - patch + 1, stride))
    if origins[-1] != length - patch:
        origins.append(length - patch)  # clamp the last window to the border
    return origins


def tile(shape, patch_size, stride):
    """Windows of ``patch_size`` every ``stride`` pixels covering an (H, W) image."""
    h, w = shape[-2:]
    if patch_size > h or patch_size > w:
        raise ValueError(f"patch size {patch_size} exceeds image size {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    origins = tuple((i, j) for i in _axis_origins(h, patch_size, stride)
                    for j in _axis_origins(w, patch_size, stride))
    return PatchGrid(patch_size, stride, (h, w), origins)


def extract(image, grid):
    p = grid.patch_size
    return [image[..., i:i + p, j:j + p] for i, j in grid.origins]


def coverage(grid):
    counts = np.zeros(grid.shape, np.int64)
    p = grid.patch_size
    for i, j in grid.origins:
        counts[i:i + p, j:j + p] += 1
    return counts


def merge(patches, grid):
    """Per-pixel arithmetic mean over every window covering the pixel."""
    p = grid.patch_size
    lead = np.shape(patches[0])[:-2]
    total = np.zeros(lead + grid.shape, np.float64)
    for patch, (i, j) in zip(patches, grid.origins):
        total[..., i:i + p, j:j + p] += patch
    counts = coverage(grid)
    if np.any(counts == 0):
        raise ValueError("patch grid leaves pixels uncovered")
    return total / counts


def predict_samples(model, x, cfg, scale=1.0, patch=None, stride=None):
    """(K, 1, H, W) ensemble members for image ``x``, patch-merged when ``patch`` is set."""
    if not patch:
        return ensemble_samples(model, x, cfg, scale)
    grid = tile(x.shape, patch, stride or patch)
    per_patch = [ensemble_samples(model, xp, cfg, scale) for xp in extract(x, grid)]
    return merge(per_patch, grid)


def predict(model, x, cfg, scale=1.0, patch=None, stride=None):
    return ensemble_stats(predict_samples(model, x, cfg, scale, patch, stride))


def score(pred_masks, gt_masks):
    """Per-image (f1, iou) arrays for aligned sequences of binary masks."""
    counts = [confusion_counts(p, g) for p, g in zip(pred_masks, gt_masks)]
    return np.array([f1(c) for c in counts]), np.array([iou(c) for c in counts])


def evaluate(model, images, masks, cfg, scale=1.0, patch=None, stride=None):
    preds = [predict(model, x, cfg, scale, patch, stride).consensus_mask for x in images]
    return score(preds, masks)


def _rep_config(cfg, rep, width):
    return SamplerConfig(nfe=cfg.nfe, noise_steps=cfg.noise_steps, ensemble=width,
                         solver=cfg.solver, seed=cfg.seed + rep * width)


def ablate_k(model, images, masks, k_values, cfg, scale=1.0, repeats=5, patch=None, stride=None):
    """Rows ``(K, mIoU, F1)`` averaged over ``repeats`` base seeds.

    Each repetition draws ``max(k_values)`` ensemble members per image and
    the K-member estimate uses the first K of them, which is exactly the
    ensemble with ``seed = base`` and size K.
    """
    k_values = [int(k) for k in k_values]
    width = max(k_values)
    miou = np.zeros((repeats, len(k_values)))
    mf1 = np.zeros_like(miou)
    for rep in range(repeats):
        rcfg = _rep_config(cfg, rep, width)
        members = [predict_samples(model, x, rcfg, scale, patch, stride) for x in images]
        for col, k in enumerate(k_values):
            preds = [mask_from_sdf(m[:k].astype(np.float64).mean(axis=0)) for m in members]
            f, i = score(preds, masks)
            miou[rep, col], mf1[rep, col] = i.mean(), f.mean()
    return [(k, float(miou[:, c].mean()), float(mf1[:, c].mean())) for c, k in enumerate(k_values)]


def image_checksum(images):
    return hashlib.sha256(np.ascontiguousarray(images, dtype="<f4").tobytes()).hexdigest()


def ablate_sdf(variants, images, masks, cfg, repeats=5, patch=None, stride=None):
    """Compare models trained on different mask representations.

    ``variants`` maps a name to ``(model, scale)``. Every variant sees the same
    conditioning images and sampler settings; rows are ``(name, F1, mIoU)``
    averaged over ``repeats`` base seeds. Also returns the checksum of the
    conditioning images each variant consumed.
    """
    rows, checksums = [], {}
    for name, (model, scale) in variants.items():
        checksums[name] = image_checksum(images)
        f_all, i_all = [], []
        for rep in range(repeats):
            rcfg = _rep_config(cfg, rep, cfg.ensemble)
            f, i = evaluate(model, images, masks, rcfg, scale, patch, stride)
            f_all.append(f.mean())
            i_all.append(i.mean())
        rows.append((name, float(np.mean(f_all)), float(np.mean(i_all))))
    return rows, checksums


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
