"""Conditional Gaussian (optimal-transport) probability paths and the CFM loss.

The OT path between the standard normal prior and a data sample ``x1`` has
mean ``t * x1`` and standard deviation ``1 - (1 - sigma_min) * t``. Training
uses the straight interpolation between a prior draw and the data sample,
which is the ``sigma_min = 0`` member of that family.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FlowConfig:
    sigma_min: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.sigma_min <= 0.1:
            raise ValueError(f"sigma_min must lie in [0, 0.1], got {self.sigma_min}")


def _check_time(t):
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t must lie in [0, 1], got {t}")


def _same_shape(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def ot_mean_std(t, x1, cfg=FlowConfig()):
    _check_time(t)
    return t * np.asarray(x1), 1.0 - (1.0 - cfg.sigma_min) * t


def ot_flow(x0, x1, t, cfg=FlowConfig()):
    """Exact conditional flow sigma_t * x0 + mu_t, pushing the prior onto N(x1, sigma_min^2)."""
    mu, sigma = ot_mean_std(t, x1, cfg)
    return sigma * np.asarray(x0) + mu


def ot_conditional_field(x, x1, t, cfg=FlowConfig()):
    """Conditional vector field u_t(x | x1) generating :func:`ot_flow`."""
    x, x1 = _same_shape(x, x1)
    _check_time(t)
    sigma = 1.0 - (1.0 - cfg.sigma_min) * t
    if sigma <= 0:
        raise ValueError(f"sigma_t must be positive, got {sigma} at t={t}")
    return -(1.0 - cfg.sigma_min) * (x - t * x1) / sigma + x1


def interpolate_state(m0, m1, t):
    """Point on the straight path between prior draw ``m0`` and data ``m1``.

    ``t`` may be a scalar or an array broadcastable against the leading
    (batch) axis, one time per example.
    """
    m0, m1 = _same_shape(m0, m1)
    t = np.asarray(t, dtype=m1.dtype if m1.dtype.kind == "f" else np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t must lie in [0, 1]")
    if t.ndim:
        t = t.reshape(t.shape + (1,) * (m1.ndim - t.ndim))
    return t * m1 + (1 - t) * m0


def training_target(m0, m1):
    m0, m1 = _same_shape(m0, m1)
    return m1 - m0


def cfm_loss(v_pred, target):
    """Half the mean squared error over every element (batch and pixels)."""
    v_pred, target = _same_shape(v_pred, target)
    diff = v_pred - target
    return 0.5 * float(np.mean(diff * diff))


def cfm_loss_grad(v_pred, target):
    """Loss and its gradient with respect to ``v_pred``."""
    v_pred, target = _same_shape(v_pred, target)
    diff = v_pred - target
    return 0.5 * float(np.mean(diff * diff)), diff / diff.size
