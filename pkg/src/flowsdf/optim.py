"""Adam and parameter EMA, operating in place on dicts of named arrays."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def _check_shapes(a, b):
    for name, arr in a.items():
        if name not in b:
            raise ValueError(f"missing entry {name!r}")
        if np.shape(b[name]) != np.shape(arr):
            raise ValueError(f"shape mismatch for {name!r}: {np.shape(arr)} vs {np.shape(b[name])}")


def adam_step(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of ``params`` (modified in place)."""
    _check_shapes(params, grads)
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params, state


def ema_update(ema_params, params, decay):
    """ema <- decay * ema + (1 - decay) * params, in place."""
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"decay must lie in [0, 1), got {decay}")
    _check_shapes(ema_params, params)
    for name, e in ema_params.items():
        e *= decay
        e += (1.0 - decay) * params[name]
    return ema_params


def warmup_decay(decay, step):
    """EMA decay capped early in training so the average tracks a young model."""
    return min(decay, (1.0 + step) / (10.0 + step))
