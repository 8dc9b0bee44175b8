"""Conditional vector-field regressor v(m_t, x, t) and its checkpoint format."""

import struct
from dataclasses import dataclass

import numpy as np

from flowsdf.nn import (Conv3x3, Dense, Down2x2, ResBlock, condition_fuse, silu,
                        silu_backward, sinusoidal_features, upsample2x,
                        upsample2x_backward)

CHECKPOINT_MAGIC = b"FSDF"
CHECKPOINT_VERSION = 1
CONFIG_ENTRY = "meta.config"
EMA_PREFIX = "ema."


@dataclass(frozen=True)
class Architecture:
    """Widths per encoder level, bottleneck width and conditioning sizes."""

    widths: tuple = (16, 32)
    bottleneck: int = 64
    image_channels: int = 1
    time_dim: int = 64
    emb_dim: int = 128
    groups: int = 4

    @property
    def levels(self):
        return len(self.widths)


class VectorField:
    """Small U-Net style encoder-decoder.

    Image stem and mask stem are summed at the first level; each encoder level
    is a residual block followed by a 2x2/stride-2 convolution, the decoder
    upsamples (nearest), concatenates the skip and applies a residual block.
    The final 1x1 convolution starts at zero, so a fresh model predicts 0.

    Inputs are channels-first: ``m_t`` of shape ``(N, 1, H, W)`` (or
    ``(1, H, W)``), ``x`` of shape ``(N, C, H, W)`` and ``t`` scalar or ``(N,)``.
    """

    def __init__(self, arch, params):
        self.arch = arch
        self.params = params
        self._build()
        missing = set(self._names()) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")

    def _build(self):
        a = self.arch
        w0 = a.widths[0]
        self.time1 = Dense("time.fc1", a.time_dim, a.emb_dim)
        self.time2 = Dense("time.fc2", a.emb_dim, a.emb_dim)
        self.mask_stem = Conv3x3("mask_stem", 1, w0)
        self.image_stem = Conv3x3("image_stem", a.image_channels, w0)
        widths = list(a.widths) + [a.bottleneck]
        self.enc = [ResBlock(f"enc{i}", widths[i], widths[i], a.emb_dim, a.groups)
                    for i in range(a.levels)]
        self.down = [Down2x2(f"down{i}", widths[i], widths[i + 1]) for i in range(a.levels)]
        self.mid = ResBlock("mid", a.bottleneck, a.bottleneck, a.emb_dim, a.groups)
        self.dec = [ResBlock(f"dec{i}", widths[i + 1] + widths[i], widths[i], a.emb_dim, a.groups)
                    for i in range(a.levels)]
        self.out = Dense("out", w0, 1, zero=True)
        self.layers = ([self.time1, self.time2, self.mask_stem, self.image_stem]
                       + self.enc + self.down + [self.mid] + self.dec + [self.out])

    def _names(self):
        probe = {}
        for layer in self.layers:
            layer.init(np.random.default_rng(0), probe, np.float32)
        return list(probe)

    @classmethod
    def init(cls, seed, arch=Architecture(), dtype=np.float32):
        rng = np.random.default_rng(seed)
        model = cls.__new__(cls)
        model.arch = arch
        model._build()
        params = {}
        for layer in model.layers:
            layer.init(rng, params, dtype)
        model.params = params
        return model

    def astype(self, dtype):
        return VectorField(self.arch, {k: v.astype(dtype) for k, v in self.params.items()})

    @property
    def dtype(self):
        return self.params["out.w"].dtype

    def _prepare(self, m_t, x, t):
        m_t, x = np.asarray(m_t), np.asarray(x)
        if m_t.ndim == 3:
            m_t, x = m_t[None], x[None]
        if m_t.ndim != 4 or m_t.shape[1] != 1:
            raise ValueError(f"m_t must have shape (N, 1, H, W), got {m_t.shape}")
        n, _, h, w = m_t.shape
        if x.shape != (n, self.arch.image_channels, h, w):
            raise ValueError(f"image shape {x.shape} does not match mask shape {m_t.shape}")
        div = 2 ** self.arch.levels
        if h % div or w % div:
            raise ValueError(f"H and W must be divisible by {div}, got {h}x{w}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        dtype = self.dtype
        return (m_t.transpose(0, 2, 3, 1).astype(dtype),
                x.transpose(0, 2, 3, 1).astype(dtype),
                sinusoidal_features(t, self.arch.time_dim).astype(dtype))

    def time_embedding(self, t):
        """(N, emb_dim) embedding of the times ``t`` fed to every residual block."""
        p = self.params
        feats = sinusoidal_features(t, self.arch.time_dim).astype(self.dtype)
        e = silu(self.time1.forward(p, feats)[0])[0]
        return silu(self.time2.forward(p, e)[0])[0]

    def forward(self, m_t, x, t):
        """Prediction and the tape needed by :meth:`backward`."""
        p = self.params
        squeeze = np.asarray(m_t).ndim == 3
        m, img, feats = self._prepare(m_t, x, t)
        tape = {"squeeze": squeeze}
        e, tape["time1"] = self.time1.forward(p, feats)
        e, tape["time_act1"] = silu(e)
        e, tape["time2"] = self.time2.forward(p, e)
        emb, tape["emb_act"] = silu(e)

        hm, tape["mask_stem"] = self.mask_stem.forward(p, m)
        hx, tape["image_stem"] = self.image_stem.forward(p, img)
        h = condition_fuse(hm, hx)
        skips = []
        for i in range(self.arch.levels):
            h, tape[f"enc{i}"] = self.enc[i].forward(p, h, emb)
            skips.append(h)
            h, tape[f"down{i}"] = self.down[i].forward(p, h)
        h, tape["mid"] = self.mid.forward(p, h, emb)
        for i in reversed(range(self.arch.levels)):
            h = np.concatenate([upsample2x(h), skips[i]], axis=-1)
            h, tape[f"dec{i}"] = self.dec[i].forward(p, h, emb)
        v, tape["out"] = self.out.forward(p, h)
        v = v.transpose(0, 3, 1, 2)
        return (v[0] if squeeze else v), tape

    def __call__(self, m_t, x, t):
        return self.forward(m_t, x, t)[0]

    def backward(self, tape, dv):
        """Gradients of a scalar loss w.r.t. every parameter, given dLoss/dv."""
        if not tape:
            raise RuntimeError("backward called without a recorded forward pass")
        p = self.params
        grads = {}
        dv = np.asarray(dv, dtype=self.dtype)
        if tape["squeeze"]:
            dv = dv[None]
        g, gr = self.out.backward(p, tape["out"], dv.transpose(0, 2, 3, 1))
        grads.update(gr)
        demb = 0
        skip_grads = [None] * self.arch.levels
        for i in range(self.arch.levels):
            g, de, gr = self.dec[i].backward(p, tape[f"dec{i}"], g)
            grads.update(gr)
            demb = demb + de
            up_ch = g.shape[-1] - self.enc[i].conv1.cout
            skip_grads[i] = g[..., up_ch:]
            g = upsample2x_backward(g[..., :up_ch])
        g, de, gr = self.mid.backward(p, tape["mid"], g)
        grads.update(gr)
        demb = demb + de
        for i in reversed(range(self.arch.levels)):
            g, gr = self.down[i].backward(p, tape[f"down{i}"], g)
            grads.update(gr)
            g = g + skip_grads[i]
            g, de, gr = self.enc[i].backward(p, tape[f"enc{i}"], g)
            grads.update(gr)
            demb = demb + de
        _, gr = self.mask_stem.backward(p, tape["mask_stem"], g)
        grads.update(gr)
        _, gr = self.image_stem.backward(p, tape["image_stem"], g)
        grads.update(gr)

        g = silu_backward(tape["emb_act"], demb)
        g, gr = self.time2.backward(p, tape["time2"], g)
        grads.update(gr)
        g = silu_backward(tape["time_act1"], g)
        _, gr = self.time1.backward(p, tape["time1"], g)
        grads.update(gr)
        return grads

    def loss_and_grads(self, m_t, x, t, target):
        """Half mean squared error against ``target`` and its parameter gradients."""
        v, tape = self.forward(m_t, x, t)
        target = np.asarray(target)
        if target.shape != v.shape:
            raise ValueError(f"shape mismatch: {v.shape} vs {target.shape}")
        diff = v - target.astype(v.dtype)
        loss = 0.5 * float(np.mean(diff.astype(np.float64) ** 2))
        return loss, self.backward(tape, diff / diff.size)


def arch_from_params(params):
    """Recover the architecture descriptor from parameter shapes."""
    levels = 0
    while f"down{levels}.w" in params:
        levels += 1
    widths = tuple(int(params[f"enc{i}.conv1.w"].shape[-1]) for i in range(levels))
    return Architecture(
        widths=widths,
        bottleneck=int(params["mid.conv1.w"].shape[-1]),
        image_channels=int(params["image_stem.w"].shape[2]),
        time_dim=int(params["time.fc1.w"].shape[0]),
        emb_dim=int(params["time.fc1.w"].shape[1]),
    )


class CheckpointError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode_checkpoint(entries):
    """Serialise named float32 tensors in the FSDF layout."""
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_checkpoint(data):
    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint while reading {what}", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {version}", 4)
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(dims, dtype=np.int64))
        entries[name] = np.frombuffer(take(4 * size, f"data of {name}"), dtype="<f4").reshape(dims).copy()
    if pos != len(data):
        raise CheckpointError("trailing bytes after last entry", pos)
    return entries


def save_checkpoint(path, params, ema_params=None, config_text=None):
    entries = dict(params)
    if ema_params is not None:
        entries.update({EMA_PREFIX + k: v for k, v in ema_params.items()})
    if config_text is not None:
        entries[CONFIG_ENTRY] = np.frombuffer(config_text.encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(entries))


def load_checkpoint(path):
    """Returns ``(params, ema_params or None, config_text or None)``."""
    with open(path, "rb") as fh:
        entries = decode_checkpoint(fh.read())
    config = entries.pop(CONFIG_ENTRY, None)
    if config is not None:
        config = config.astype(np.uint8).tobytes().decode("utf-8")
    ema = {k[len(EMA_PREFIX):]: v for k, v in entries.items() if k.startswith(EMA_PREFIX)}
    params = {k: v for k, v in entries.items() if not k.startswith(EMA_PREFIX)}
    return params, (ema or None), config
