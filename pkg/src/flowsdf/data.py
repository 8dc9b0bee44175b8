"""Synthetic image/mask pairs and the on-disk formats (FSTN tensors, PGM, manifest)."""

import hashlib
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

TENSOR_MAGIC = b"FSTN"
TENSOR_VERSION = 1
MANIFEST_NAME = "manifest.txt"

FOREGROUND_LEVEL = 0.7
BACKGROUND_LEVEL = 0.2
SMOOTHING_SIGMA = 1.5
MAX_PLACEMENT_ATTEMPTS = 100


class FormatError(ValueError):
    """Malformed tensor or image file; ``offset`` is where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def write_tensor(path, tensor):
    arr = np.asarray(tensor, dtype="<f4")  # tobytes() below is C order
    if arr.ndim > 4:
        raise ValueError(f"tensor rank must be <= 4, got {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<IB", TENSOR_VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise FormatError("truncated magic", len(data))
    if data[:4] != TENSOR_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", 0)
    if len(data) < 9:
        raise FormatError("truncated header", len(data))
    version, rank = struct.unpack_from("<IB", data, 4)
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if rank > 4:
        raise FormatError(f"rank {rank} exceeds 4", 8)
    pos = 9
    if len(data) < pos + 4 * rank:
        raise FormatError("truncated dims", len(data))
    dims = struct.unpack_from(f"<{rank}I", data, pos)
    pos += 4 * rank
    nbytes = 4 * int(np.prod(dims, dtype=np.int64))
    if len(data) < pos + nbytes:
        raise FormatError(f"truncated payload: expected {nbytes} bytes", len(data))
    if len(data) > pos + nbytes:
        raise FormatError("trailing bytes after payload", pos + nbytes)
    return np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)


def to_gray8(field, lo, hi):
    """Linear map [lo, hi] -> [0, 255], rounding half away from zero, clamped."""
    if not hi > lo:
        raise ValueError(f"need hi > lo, got lo={lo}, hi={hi}")
    scaled = (np.asarray(field, dtype=np.float64) - lo) / (hi - lo) * 255.0
    return np.floor(np.clip(scaled, 0.0, 255.0) + 0.5).astype(np.uint8)


def write_pgm(path, field, lo, hi):
    pixels = to_gray8(field, lo, hi)
    if pixels.ndim == 3 and pixels.shape[0] == 1:
        pixels = pixels[0]
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2-D field, got shape {pixels.shape}")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path):
    """Returns the uint8 pixel array of a binary (P5) PGM with maxval 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", pos)
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {fields[0]!r})", 0)
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise FormatError("non-integer PGM header field", pos) from None
    if maxval != 255 or w < 1 or h < 1:
        raise FormatError(f"unsupported PGM header {w}x{h} maxval {maxval}", pos)
    pos += 1  # single whitespace byte before the raster
    if len(data) < pos + w * h:
        raise FormatError("truncated PGM raster", len(data))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


@dataclass(frozen=True)
class SyntheticConfig:
    count: int = 200
    size: int = 32
    objects_min: int = 1
    objects_max: int = 4
    radius_min: float = 3.0
    radius_max: float = 7.0
    noise_std: float = 0.1
    gradient: float = 0.15
    seed: int = 7
    index_offset: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.size < 1:
            raise ValueError("size must be >= 1")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ValueError("need 0 <= objects_min <= objects_max")
        if not 2 <= self.radius_min <= self.radius_max:
            raise ValueError("need 2 <= radius_min <= radius_max")
        if 2 * self.radius_min > self.size:
            raise ValueError("objects with the minimum radius do not fit in the image")
        if self.noise_std < 0 or self.gradient < 0:
            raise ValueError("noise_std and gradient must be non-negative")


def _ellipse(size, cy, cx, a, b, angle):
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def generate_sample(cfg, index):
    """One (image, mask, skipped_objects) triple; deterministic in (seed, index)."""
    rng = np.random.default_rng([cfg.seed, cfg.index_offset + index])
    size = cfg.size
    mask = np.zeros((size, size), bool)
    skipped = 0
    for _ in range(rng.integers(cfg.objects_min, cfg.objects_max + 1)):
        a, b = rng.uniform(cfg.radius_min, cfg.radius_max, size=2)
        angle = rng.uniform(0.0, np.pi)
        # axis-aligned half extents of the rotated ellipse
        ey = np.sqrt((a * np.sin(angle)) ** 2 + (b * np.cos(angle)) ** 2)
        ex = np.sqrt((a * np.cos(angle)) ** 2 + (b * np.sin(angle)) ** 2)
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            cy, cx = rng.uniform(0.0, size - 1.0, size=2)
            if ey <= cy <= size - 1 - ey and ex <= cx <= size - 1 - ex:
                mask |= _ellipse(size, cy, cx, a, b, angle)
                break
        else:
            skipped += 1
    intensity = np.where(mask, FOREGROUND_LEVEL, BACKGROUND_LEVEL)
    image = gaussian_filter(intensity, SMOOTHING_SIGMA, mode="nearest")
    image = image + rng.normal(0.0, cfg.noise_std, size=image.shape)
    direction = rng.uniform(0.0, 2.0 * np.pi)
    ramp = np.linspace(-0.5, 0.5, size)
    image = image + cfg.gradient * (np.cos(direction) * ramp[None, :] + np.sin(direction) * ramp[:, None])
    image = np.clip(image, 0.0, 1.0)
    return image[None].astype(np.float32), mask[None].astype(np.float32), skipped


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def generate(cfg, out_dir):
    """Write ``count`` samples plus a manifest to ``out_dir``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    names, skipped = [], {}
    for i in range(cfg.count):
        image, mask, n_skipped = generate_sample(cfg, i)
        for kind, arr in (("image", image), ("mask", mask)):
            name = f"{i:05d}_{kind}.fstn"
            write_tensor(os.path.join(out_dir, name), arr)
            names.append(name)
        if n_skipped:
            skipped[i] = n_skipped
    lines = ["version=1"]
    lines += [f"config.{k}={v}" for k, v in asdict(cfg).items()]
    lines += [f"skipped.{i:05d}={n}" for i, n in skipped.items()]
    lines += [f"{name} {sha256_file(os.path.join(out_dir, name))}" for name in names]
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_manifest(directory):
    """Parse a manifest into ``(config dict, {filename: sha256}, {index: skipped})``."""
    config, files, skipped = {}, {}, {}
    with open(os.path.join(directory, MANIFEST_NAME), encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "version=1":
        raise FormatError("manifest must start with version=1", 0)
    for line in lines[1:]:
        if line.startswith("config."):
            key, _, value = line[len("config."):].partition("=")
            config[key] = value
        elif line.startswith("skipped."):
            key, _, value = line[len("skipped."):].partition("=")
            skipped[int(key)] = int(value)
        elif line:
            name, _, digest = line.partition(" ")
            files[name] = digest
    return config, files, skipped


def verify_manifest(directory):
    """Names of files whose checksum does not match the manifest."""
    _, files, _ = read_manifest(directory)
    return [name for name, digest in files.items()
            if not os.path.exists(os.path.join(directory, name))
            or sha256_file(os.path.join(directory, name)) != digest]


def load_dataset(directory):
    """All (image, mask) pairs in index order as arrays ``(N, C, H, W)`` / ``(N, 1, H, W)``."""
    _, files, _ = read_manifest(directory)
    stems = sorted({name.rsplit("_", 1)[0] for name in files})
    images = np.stack([read_tensor(os.path.join(directory, f"{s}_image.fstn")) for s in stems])
    masks = np.stack([read_tensor(os.path.join(directory, f"{s}_mask.fstn")) for s in stems])
    return images, masks
