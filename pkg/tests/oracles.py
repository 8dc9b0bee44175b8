"""Slow, obviously-correct reference implementations used only by the tests."""

import numpy as np


def brute_edt_squared(seeds):
    seeds = np.asarray(seeds, bool)
    h, w = seeds.shape
    ii, jj = np.nonzero(seeds)
    if len(ii) == 0:
        return np.full((h, w), np.inf)
    gi, gj = np.mgrid[:h, :w]
    d = (gi[..., None] - ii) ** 2 + (gj[..., None] - jj) ** 2
    return d.min(axis=-1).astype(np.float64)


def brute_boundary(mask):
    mask = np.asarray(mask, bool)
    h, w = mask.shape
    out = np.zeros((h, w), np.uint8)
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                a, b = i + di, j + dj
                if 0 <= a < h and 0 <= b < w and not mask[a, b]:
                    out[i, j] = 1
    return out


def brute_sdf(mask, delta):
    mask = np.asarray(mask, bool)
    boundary = brute_boundary(mask).astype(bool)
    h, w = mask.shape
    if not boundary.any():
        return np.full((h, w), -float(delta) if mask.all() else float(delta))
    bi, bj = np.nonzero(boundary)
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if boundary[i, j]:
                continue
            d = min(np.sqrt(np.min((bi - i) ** 2 + (bj - j) ** 2)), delta)
            out[i, j] = -d if mask[i, j] else d
    return out


def brute_confusion(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def random_mask(rng, max_side=16, min_side=1):
    h, w = rng.integers(min_side, max_side + 1, size=2)
    return rng.random((h, w)) < rng.random()


def central_difference(fn, x, h=1e-5):
    """Gradient of scalar ``fn`` at array ``x`` (modified and restored in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def small_architecture(image_channels=1):
    from flowsdf.model import Architecture
    return Architecture(widths=(8, 16), bottleneck=16, image_channels=image_channels,
                        time_dim=8, emb_dim=8)


def model_gradient_error(seed, size=8, coords=16, h=1e-5):
    """Worst relative error between analytic and central-difference gradients.

    Builds a float64 model with perturbed (non-zero) output weights, then
    checks ``coords`` random coordinates of every parameter tensor plus one
    random direction through the whole parameter vector.
    """
    from flowsdf.flow import training_target
    from flowsdf.model import VectorField

    rng = np.random.default_rng(seed)
    model = VectorField.init(seed, small_architecture(), np.float64)
    for name in ("out.w", "out.b"):
        model.params[name] += 0.3 * rng.standard_normal(model.params[name].shape)
    n = 2
    m0 = rng.standard_normal((n, 1, size, size))
    m1 = rng.uniform(-1, 1, (n, 1, size, size))
    x = rng.random((n, 1, size, size))
    t = rng.random(n)
    m_t = (t[:, None, None, None] * m1 + (1 - t[:, None, None, None]) * m0)
    target = training_target(m0, m1)

    def loss():
        return 0.5 * float(np.mean((model(m_t, x, t) - target) ** 2))

    _, grads = model.loss_and_grads(m_t, x, t, target)
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            numeric[k] = (up - down) / (2 * h)
        worst = max(worst, relative_error(grads[name].reshape(-1)[idx], numeric))

    direction = {k: rng.standard_normal(v.shape) for k, v in model.params.items()}
    analytic = sum(float(np.sum(grads[k] * d)) for k, d in direction.items())
    originals = {k: v.copy() for k, v in model.params.items()}
    ends = []
    for sign in (1, -1):
        for k, d in direction.items():
            model.params[k][...] = originals[k] + sign * h * d
        ends.append(loss())
    for k in originals:
        model.params[k][...] = originals[k]
    numeric = (ends[0] - ends[1]) / (2 * h)
    return max(worst, relative_error(analytic, numeric))
