"""ODE sampling of the learned field, with optional noise re-injection, and ensembles."""

from dataclasses import dataclass

import numpy as np

from flowsdf.sdf import mask_from_sdf

SOLVERS = {"euler": 1, "midpoint": 2, "rk4": 4}  # field evaluations per step


@dataclass(frozen=True)
class SamplerConfig:
    nfe: int = 4
    noise_steps: int = 1
    ensemble: int = 1
    solver: str = "euler"
    seed: int = 0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {sorted(SOLVERS)}")
        if self.nfe < 1 or self.noise_steps < 1 or self.ensemble < 1:
            raise ValueError("nfe, noise_steps and ensemble must all be >= 1")

    @property
    def step_size(self):
        return SOLVERS[self.solver] / self.nfe


@dataclass
class EnsembleStats:
    mean: np.ndarray
    variance: np.ndarray
    std: np.ndarray
    consensus_mask: np.ndarray


class NonFiniteStateError(FloatingPointError):
    pass


def ode_step(solver, field_fn, state, l, eta):
    """Advance ``state`` from time ``l`` to ``l + eta`` with an explicit scheme."""
    if l + eta > 1 + 1e-9:
        raise ValueError(f"step from {l} by {eta} overshoots t=1")
    if solver == "euler":
        return state + eta * field_fn(state, l)
    if solver == "midpoint":
        k1 = field_fn(state, l)
        return state + eta * field_fn(state + 0.5 * eta * k1, l + 0.5 * eta)
    if solver == "rk4":
        k1 = field_fn(state, l)
        k2 = field_fn(state + 0.5 * eta * k1, l + 0.5 * eta)
        k3 = field_fn(state + 0.5 * eta * k2, l + 0.5 * eta)
        k4 = field_fn(state + eta * k3, l + eta)
        return state + eta / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    raise ValueError(f"unknown solver {solver!r}")


def step_times(t_start, eta):
    """Start times and sizes of the steps from ``t_start`` to 1.

    ``round((1 - t_start) / eta)`` steps of size ``eta``; the last one is
    stretched or shortened to land exactly on t=1.
    """
    if not 0.0 <= t_start < 1.0:
        raise ValueError(f"t_start must lie in [0, 1), got {t_start}")
    n = max(1, int(round((1.0 - t_start) / eta)))
    starts = [t_start + i * eta for i in range(n)]
    sizes = [eta] * (n - 1) + [1.0 - starts[-1]]
    return list(zip(starts, sizes))


def integrate(field_fn, m_start, t_start, cfg):
    state = m_start
    for l, eta in step_times(t_start, cfg.step_size):
        state = ode_step(cfg.solver, field_fn, state, l, eta)
    return state


def _model_field(model, x):
    def field_fn(state, time):
        out = model(state, x, time)
        if not np.all(np.isfinite(out)):
            raise NonFiniteStateError(f"non-finite vector field at t={time:.6g}")
        return out
    return field_fn


def renoise(denoised, z, level):
    """Mix a denoised estimate back towards the prior: level * denoised + (1 - level) * z."""
    return level * denoised + (1.0 - level) * z


def sample(model, x, cfg, rng, scale=1.0):
    """Draw one segmentation field for the (C, H, W) image ``x``.

    ``model(state, x, t)`` is the learned vector field on (1, H, W) states.
    The result is multiplied by ``scale`` (the SDF truncation radius when the
    model works on normalised SDFs).
    """
    x = np.asarray(x, np.float32)
    shape = (1,) + x.shape[1:]
    field_fn = _model_field(model, x)
    m = rng.standard_normal(shape).astype(np.float32)
    for j in range(cfg.noise_steps):
        t = j / cfg.noise_steps
        denoised = integrate(field_fn, m, t, cfg)
        if not np.all(np.isfinite(denoised)):
            raise NonFiniteStateError(f"non-finite state after integrating from t={t:.6g}")
        z = rng.standard_normal(shape).astype(np.float32)
        m = renoise(denoised, z, (j + 1) / cfg.noise_steps)
    return m * scale


def ensemble_samples(model, x, cfg, scale=1.0):
    """``cfg.ensemble`` independent samples, run k seeded with ``cfg.seed + k``."""
    return np.stack([sample(model, x, cfg, np.random.default_rng(cfg.seed + k), scale)
                     for k in range(cfg.ensemble)])


def ensemble_stats(samples):
    samples = np.asarray(samples, np.float64)
    mean = samples.mean(axis=0)
    variance = np.mean((samples - mean) ** 2, axis=0)
    return EnsembleStats(mean, variance, np.sqrt(variance), mask_from_sdf(mean))


def ensemble(model, x, cfg, scale=1.0):
    return ensemble_stats(ensemble_samples(model, x, cfg, scale))
