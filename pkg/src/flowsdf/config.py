"""Flat ``key = value`` run configuration with namespaced, typed keys."""

import os

from flowsdf.data import SyntheticConfig
from flowsdf.model import Architecture
from flowsdf.sampler import SOLVERS, SamplerConfig
from flowsdf.train import REPRESENTATIONS, TrainConfig

CONFIG_NAME = "config.txt"


class ConfigError(ValueError):
    pass


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    values = tuple(int(v) for v in text.split(",") if v.strip())
    if not values:
        raise ValueError("empty list")
    return values


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {sorted(options)}, got {text!r}")
        return text
    return parse


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (parser, default)
SCHEMA = {
    "data.count_train": (int, 200),
    "data.count_test": (int, 50),
    "data.size": (int, 32),
    "data.objects_min": (int, 1),
    "data.objects_max": (int, 4),
    "data.radius_min": (float, 3.0),
    "data.radius_max": (float, 7.0),
    "data.noise_std": (float, 0.1),
    "data.gradient": (float, 0.15),
    "data.seed": (int, 7),
    "sdf.delta": (float, 5.0),
    "sdf.representation": (_choice(REPRESENTATIONS), "sdf"),
    "model.widths": (_ints, (16, 32)),
    "model.bottleneck": (int, 64),
    "model.time_dim": (int, 64),
    "model.emb_dim": (int, 128),
    "train.lr": (float, 1e-4),
    "train.batch_size": (int, 16),
    "train.epochs": (int, 100000),
    "train.max_steps": (int, 3000),
    "train.ema_decay": (float, 0.9999),
    "train.ema_warmup": (_bool, True),
    "train.crop_size": (int, 16),
    "train.seed": (int, 0),
    "train.checkpoint_every": (int, 0),
    "sampler.nfe": (int, 4),
    "sampler.noise_steps": (int, 1),
    "sampler.ensemble": (int, 4),
    "sampler.solver": (_choice(SOLVERS), "euler"),
    "sampler.seed": (int, 0),
    "sampler.weights": (_choice(("ema", "raw")), "ema"),
    "eval.patch": (int, 0),
    "eval.stride": (int, 0),
    "eval.k_values": (_ints, (1, 2, 4, 8, 16)),
    "eval.repeats": (int, 5),
    "ablate.mode": (_choice(("k", "sdf")), "k"),
    "paths.dataset": (str, ""),
    "paths.checkpoint": (str, ""),
    "paths.checkpoint_binary": (str, ""),
    "paths.image": (str, ""),
    "paths.mask": (str, ""),
    "paths.predictions": (str, ""),
}


def parse_lines(text, source="<config>"):
    """Parse ``key = value`` lines (``#`` comments) into a dict of raw strings."""
    raw = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {line!r}")
        raw[key.strip()] = value.strip()
    return raw


class RunConfig:
    """Resolved configuration: schema defaults, then file values, then overrides."""

    def __init__(self, values=None):
        self.values = {key: default for key, (_, default) in SCHEMA.items()}
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser = SCHEMA[key][0]
        if isinstance(value, str):
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigError(f"invalid value for {key}: {exc}") from None
        self.values[key] = value

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def load(cls, path=None, overrides=()):
        cfg = cls()
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
            for key, value in parse_lines(text, path).items():
                cfg.set(key, value)
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"override must be key=value, got {item!r}")
            cfg.set(key.strip(), value.strip())
        return cfg

    @classmethod
    def from_text(cls, text):
        return cls(parse_lines(text))

    def to_text(self):
        return "".join(f"{key} = {_fmt(value)}\n" for key, value in self.values.items())

    def write(self, directory):
        path = os.path.join(directory, CONFIG_NAME)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        return path

    def synthetic(self, split):
        count = self["data.count_train"] if split == "train" else self["data.count_test"]
        offset = 0 if split == "train" else self["data.count_train"]
        try:
            return SyntheticConfig(
                count=count, size=self["data.size"],
                objects_min=self["data.objects_min"], objects_max=self["data.objects_max"],
                radius_min=self["data.radius_min"], radius_max=self["data.radius_max"],
                noise_std=self["data.noise_std"], gradient=self["data.gradient"],
                seed=self["data.seed"], index_offset=offset)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def architecture(self, image_channels=1):
        return Architecture(widths=self["model.widths"], bottleneck=self["model.bottleneck"],
                            image_channels=image_channels, time_dim=self["model.time_dim"],
                            emb_dim=self["model.emb_dim"])

    def train_config(self, image_channels=1):
        try:
            return TrainConfig(
                learning_rate=self["train.lr"], batch_size=self["train.batch_size"],
                epochs=self["train.epochs"], max_steps=self["train.max_steps"],
                ema_decay=self["train.ema_decay"], ema_warmup=self["train.ema_warmup"],
                crop_size=self["train.crop_size"], seed=self["train.seed"],
                checkpoint_every=self["train.checkpoint_every"],
                arch=self.architecture(image_channels))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def sampler_config(self):
        try:
            return SamplerConfig(nfe=self["sampler.nfe"], noise_steps=self["sampler.noise_steps"],
                                 ensemble=self["sampler.ensemble"], solver=self["sampler.solver"],
                                 seed=self["sampler.seed"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
