"""End-to-end steps shared by the CLI and the acceptance suite."""

import os

import numpy as np

from flowsdf.config import RunConfig
from flowsdf.data import generate, load_dataset, read_pgm, read_tensor
from flowsdf.model import VectorField, arch_from_params, load_checkpoint
from flowsdf.train import prepare_fields, train


def make_data(cfg, out_dir):
    """Generate the train and test splits under ``out_dir/train`` and ``out_dir/test``."""
    return {split: generate(cfg.synthetic(split), os.path.join(out_dir, split))
            for split in ("train", "test")}


def split_dir(dataset, split):
    """``dataset/split`` when the dataset root holds both splits, else ``dataset`` itself."""
    candidate = os.path.join(dataset, split)
    return candidate if os.path.isdir(candidate) else dataset


def read_field(path):
    """A 2-D or (C, H, W) array from an FSTN tensor or an 8-bit PGM (scaled to [0, 1])."""
    if path.lower().endswith(".pgm"):
        return read_pgm(path)[None].astype(np.float32) / 255.0
    arr = read_tensor(path)
    return arr if arr.ndim == 3 else arr[None]


def train_from_config(cfg, out_dir):
    images, masks = load_dataset(split_dir(cfg["paths.dataset"], "train"))
    fields = prepare_fields(masks, cfg["sdf.representation"], cfg["sdf.delta"])
    return train(images, fields, cfg.train_config(images.shape[1]), out_dir, cfg.to_text())


class LoadedModel:
    """A checkpointed vector field plus what is needed to read its outputs.

    ``scale`` converts the model's normalised field back to SDF units
    (the truncation radius for SDF models, 1 for binary-mask models).
    """

    def __init__(self, path, weights="ema"):
        params, ema, config_text = load_checkpoint(path)
        chosen = ema if weights == "ema" and ema is not None else params
        self.model = VectorField(arch_from_params(chosen), chosen)
        self.train_config = RunConfig.from_text(config_text) if config_text else RunConfig()
        self.representation = self.train_config["sdf.representation"]
        self.delta = self.train_config["sdf.delta"]
        self.scale = self.delta if self.representation == "sdf" else 1.0
