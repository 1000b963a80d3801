"""Central finite-difference oracle for layer and model gradients."""
from __future__ import annotations

import numpy as np

DEFAULT_H = 1e-5
# gradients below this magnitude are compared absolutely; conv biases feeding
# batch norm have an exact-zero gradient that differencing only resolves to ~1e-11
REL_FLOOR = 1e-3


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(f, x: np.ndarray, idx=None, h: float = DEFAULT_H) -> np.ndarray:
    """d f / d x at flat positions ``idx`` (all if None); ``x`` is perturbed in place and restored."""
    flat = x.reshape(-1)
    idx = range(flat.size) if idx is None else idx
    out = []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def sample_indices(size: int, k: int | None, rng) -> np.ndarray:
    if k is None or k >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, k, replace=False))


def check_layer(layer, x: np.ndarray, rng, per_tensor: int | None = None,
                h: float = DEFAULT_H, floor: float = REL_FLOOR) -> dict[str, float]:
    """Max relative error per tensor (input and each parameter) for L = sum(y * R)."""
    y, _ = layer.forward(x, train=True, rng=np.random.default_rng(0))
    proj = rng.standard_normal(y.shape)

    def loss():
        out, _ = layer.forward(x, train=True, rng=np.random.default_rng(0))
        return float(np.sum(out * proj))

    _, cache = layer.forward(x, train=True, rng=np.random.default_rng(0))
    dx, grads = layer.backward(cache, proj)
    errors = {}
    idx = sample_indices(x.size, per_tensor, rng)
    errors["input"] = relative_error(dx.reshape(-1)[idx], numeric_grad(loss, x, idx, h), floor)
    for name, p in layer.params.items():
        idx = sample_indices(p.size, per_tensor, rng)
        errors[name] = relative_error(grads[name].reshape(-1)[idx], numeric_grad(loss, p, idx, h), floor)
    return errors


def check_model(model, x: np.ndarray, target: np.ndarray, rng, per_tensor: int | None = 8,
                h: float = DEFAULT_H, floor: float = REL_FLOOR) -> dict[str, float]:
    """Max relative error per parameter tensor of the MSE loss; dropout must be off (p=0)."""
    from .model import mse_loss

    def loss():
        pred, _ = model.forward(x, train=True, rng=np.random.default_rng(0))
        return mse_loss(pred, target)[0]

    pred, cache = model.forward(x, train=True, rng=np.random.default_rng(0))
    grads = model.backward(cache, mse_loss(pred, target)[1])
    errors = {}
    for name, p in model.named_params():
        idx = sample_indices(p.size, per_tensor, rng)
        errors[name] = relative_error(grads[name].reshape(-1)[idx],
                                      numeric_grad(loss, p, idx, h), floor)
    return errors
