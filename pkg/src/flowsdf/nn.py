"""Layers with hand-written backward passes.

All spatial tensors are channels-last ``(N, H, W, C)``. Every layer is a
stateless description that reads its parameters by name from a shared dict;
``forward`` returns ``(output, cache)`` and ``backward`` consumes that cache,
returning the input gradient and a dict of parameter gradients.
"""

import numpy as np

_SHIFTS_3X3 = [(dy, dx) for dy in range(3) for dx in range(3)]


def uniform_fan_in(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv3x3:
    """3x3 convolution, stride 1, zero padding 1.

    The padded input is flattened to ``(N*(H+2)*(W+2), C)`` so every kernel
    tap is a contiguous row slice and the convolution is nine tall matmuls.
    Rows that straddle the padding produce garbage and are cropped away.
    """

    def __init__(self, name, cin, cout, zero=False):
        self.w, self.b = name + ".w", name + ".b"
        self.cin, self.cout, self.zero = cin, cout, zero

    def init(self, rng, params, dtype):
        shape = (3, 3, self.cin, self.cout)
        params[self.w] = (np.zeros(shape, dtype) if self.zero
                          else uniform_fan_in(rng, shape, 9 * self.cin, dtype))
        params[self.b] = np.zeros(self.cout, dtype)

    def forward(self, params, x):
        n, h, w, c = x.shape
        hp, wp = h + 2, w + 2
        xp = np.zeros((n, hp, wp, c), x.dtype)
        xp[:, 1:-1, 1:-1] = x
        flat = xp.reshape(-1, c)
        rows = flat.shape[0] - 2 * wp - 2
        kernel = params[self.w].reshape(9, c, self.cout)
        acc = np.empty((flat.shape[0], self.cout), x.dtype)
        np.matmul(flat[:rows], kernel[0], out=acc[:rows])
        for k, (dy, dx) in enumerate(_SHIFTS_3X3[1:], start=1):
            off = dy * wp + dx
            acc[:rows] += flat[off:off + rows] @ kernel[k]
        acc[rows:] = 0
        y = acc.reshape(n, hp, wp, self.cout)[:, :h, :w] + params[self.b]
        return y, (flat, x.shape)

    def backward(self, params, cache, dy):
        flat, (n, h, w, c) = cache
        hp, wp = h + 2, w + 2
        rows = flat.shape[0] - 2 * wp - 2
        gp = np.zeros((n, hp, wp, self.cout), dy.dtype)
        gp[:, :h, :w] = dy
        gf = gp.reshape(-1, self.cout)[:rows]
        kernel = params[self.w].reshape(9, c, self.cout)
        dkernel = np.empty_like(kernel)
        dflat = np.zeros_like(flat)
        for k, (ky, kx) in enumerate(_SHIFTS_3X3):
            off = ky * wp + kx
            dkernel[k] = flat[off:off + rows].T @ gf
            dflat[off:off + rows] += gf @ kernel[k].T
        dx = dflat.reshape(n, hp, wp, c)[:, 1:-1, 1:-1]
        grads = {self.w: dkernel.reshape(params[self.w].shape),
                 self.b: dy.sum(axis=(0, 1, 2))}
        return np.ascontiguousarray(dx), grads


class Dense:
    """Affine map over the last axis; doubles as a 1x1 convolution."""

    def __init__(self, name, cin, cout, zero=False):
        self.w, self.b = name + ".w", name + ".b"
        self.cin, self.cout, self.zero = cin, cout, zero

    def init(self, rng, params, dtype):
        shape = (self.cin, self.cout)
        params[self.w] = (np.zeros(shape, dtype) if self.zero
                          else uniform_fan_in(rng, shape, self.cin, dtype))
        params[self.b] = np.zeros(self.cout, dtype)

    def forward(self, params, x):
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.cin)
        y = flat @ params[self.w] + params[self.b]
        return y.reshape(lead + (self.cout,)), flat

    def backward(self, params, cache, dy):
        flat = cache
        g = dy.reshape(-1, self.cout)
        grads = {self.w: flat.T @ g, self.b: g.sum(axis=0)}
        dx = (g @ params[self.w].T).reshape(dy.shape[:-1] + (self.cin,))
        return dx, grads


class Down2x2:
    """2x2 convolution with stride 2 (halves the spatial resolution)."""

    def __init__(self, name, cin, cout):
        self.w, self.b = name + ".w", name + ".b"
        self.cin, self.cout = cin, cout

    def init(self, rng, params, dtype):
        shape = (2, 2, self.cin, self.cout)
        params[self.w] = uniform_fan_in(rng, shape, 4 * self.cin, dtype)
        params[self.b] = np.zeros(self.cout, dtype)

    def forward(self, params, x):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"spatial size {h}x{w} is not divisible by 2")
        cols = (x.reshape(n, h // 2, 2, w // 2, 2, c)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(-1, 4 * c))
        y = cols @ params[self.w].reshape(4 * c, self.cout) + params[self.b]
        return y.reshape(n, h // 2, w // 2, self.cout), (cols, x.shape)

    def backward(self, params, cache, dy):
        cols, (n, h, w, c) = cache
        g = dy.reshape(-1, self.cout)
        kernel = params[self.w].reshape(4 * c, self.cout)
        grads = {self.w: (cols.T @ g).reshape(params[self.w].shape),
                 self.b: g.sum(axis=0)}
        dx = ((g @ kernel.T)
              .reshape(n, h // 2, w // 2, 2, 2, c)
              .transpose(0, 1, 3, 2, 4, 5)
              .reshape(n, h, w, c))
        return dx, grads


class GroupNorm:
    def __init__(self, name, channels, groups=4, eps=1e-5):
        if channels % groups:
            raise ValueError(f"{channels} channels cannot be split into {groups} groups")
        self.scale, self.shift = name + ".scale", name + ".shift"
        self.channels, self.groups, self.eps = channels, groups, eps

    def init(self, rng, params, dtype):
        params[self.scale] = np.ones(self.channels, dtype)
        params[self.shift] = np.zeros(self.channels, dtype)

    def _group_mean(self, per_channel, count):
        # (N, C) channel sums -> (N, C) group means broadcast back per channel
        n, c = per_channel.shape
        cg = c // self.groups
        g = per_channel.reshape(n, self.groups, cg).sum(axis=-1) / (count * cg)
        return np.repeat(g, cg, axis=1)[:, None, :]

    def forward(self, params, x):
        n, h, w, c = x.shape
        xr = x.reshape(n, h * w, c)
        centred = xr - self._group_mean(xr.sum(axis=1), h * w)
        var = self._group_mean(np.einsum("npc,npc->nc", centred, centred), h * w)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = centred * inv_std
        y = xhat.reshape(x.shape) * params[self.scale] + params[self.shift]
        return y, (xhat, inv_std)

    def backward(self, params, cache, dy):
        xhat, inv_std = cache
        n, h, w, c = dy.shape
        dyr = dy.reshape(n, h * w, c)
        grads = {self.scale: np.einsum("npc,npc->c", dyr, xhat),
                 self.shift: dyr.sum(axis=(0, 1))}
        g = dyr * params[self.scale]
        mean_g = self._group_mean(g.sum(axis=1), h * w)
        mean_gx = self._group_mean(np.einsum("npc,npc->nc", g, xhat), h * w)
        dx = inv_std * (g - mean_g - xhat * mean_gx)
        return dx.reshape(dy.shape), grads


def silu(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return x * sig, (x, sig)


def silu_backward(cache, dy):
    x, sig = cache
    return dy * sig * (1.0 + x * (1.0 - sig))


def upsample2x(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2x_backward(dy):
    n, h, w, c = dy.shape
    return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def condition_fuse(mask_features, image_features):
    """Additive conditioning of mask features on image features."""
    mask_features = np.asarray(mask_features)
    image_features = np.asarray(image_features)
    if mask_features.shape != image_features.shape:
        raise ValueError(f"shape mismatch: {mask_features.shape} vs {image_features.shape}")
    return mask_features + image_features


def sinusoidal_features(t, dim, base=10000.0):
    """Raw sin/cos time features, frequencies ``base ** (-2k / dim)``."""
    if dim % 2:
        raise ValueError(f"time embedding dimension must be even, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t must lie in [0, 1]")
    freqs = base ** (-2.0 * np.arange(dim // 2) / dim)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class ResBlock:
    """(conv3x3 -> GN -> SiLU) x 2 plus a residual connection.

    The time embedding enters as a per-channel bias after the first conv.
    A 1x1 projection is used on the residual path when widths differ.
    """

    def __init__(self, name, cin, cout, emb_dim, groups=4):
        self.conv1 = Conv3x3(name + ".conv1", cin, cout)
        self.norm1 = GroupNorm(name + ".norm1", cout, groups)
        self.conv2 = Conv3x3(name + ".conv2", cout, cout)
        self.norm2 = GroupNorm(name + ".norm2", cout, groups)
        self.temb = Dense(name + ".temb", emb_dim, cout)
        self.skip = Dense(name + ".skip", cin, cout) if cin != cout else None
        self.layers = [self.conv1, self.norm1, self.conv2, self.norm2, self.temb]
        if self.skip is not None:
            self.layers.append(self.skip)

    def init(self, rng, params, dtype):
        for layer in self.layers:
            layer.init(rng, params, dtype)

    def forward(self, params, x, emb):
        h, c_conv1 = self.conv1.forward(params, x)
        bias, c_temb = self.temb.forward(params, emb)
        h = h + bias[:, None, None, :]
        h, c_norm1 = self.norm1.forward(params, h)
        h, c_act1 = silu(h)
        h, c_conv2 = self.conv2.forward(params, h)
        h, c_norm2 = self.norm2.forward(params, h)
        h, c_act2 = silu(h)
        if self.skip is None:
            res, c_skip = x, None
        else:
            res, c_skip = self.skip.forward(params, x)
        return h + res, (c_conv1, c_temb, c_norm1, c_act1, c_conv2, c_norm2, c_act2, c_skip)

    def backward(self, params, cache, dy):
        c_conv1, c_temb, c_norm1, c_act1, c_conv2, c_norm2, c_act2, c_skip = cache
        grads = {}
        g = silu_backward(c_act2, dy)
        g, gr = self.norm2.backward(params, c_norm2, g)
        grads.update(gr)
        g, gr = self.conv2.backward(params, c_conv2, g)
        grads.update(gr)
        g = silu_backward(c_act1, g)
        g, gr = self.norm1.backward(params, c_norm1, g)
        grads.update(gr)
        demb, gr = self.temb.backward(params, c_temb, g.sum(axis=(1, 2)))
        grads.update(gr)
        dx, gr = self.conv1.backward(params, c_conv1, g)
        grads.update(gr)
        if self.skip is None:
            dx = dx + dy
        else:
            dres, gr = self.skip.backward(params, c_skip, dy)
            grads.update(gr)
            dx = dx + dres
        return dx, demb, grads
