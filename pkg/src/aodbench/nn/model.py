"""Sequential model container, the default AOD CNN, loss and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool, ReLU, ShapeError,
)


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalingParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise ValueError(f"degenerate scaling range [{self.min}, {self.max}]")


@dataclass
class ForwardCache:
    version: int
    entries: list


class Model:
    def __init__(self, layers: list[Layer], scaler: ScalingParams | None = None):
        if not layers:
            raise ValueError("invalid model: no layers")
        self.layers = list(layers)
        self.scaler = scaler
        self.version = 0
        self.meta: dict = {}

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", arr) for i, layer in enumerate(self.layers)
                for name, arr in layer.params.items()]

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())

    def param_count(self) -> int:
        return sum(a.size for _, a in self.named_params())

    def shape_trace(self, input_shape: tuple) -> list[tuple]:
        shapes = [tuple(input_shape)]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
        return shapes

    def forward(self, x, train: bool = False, rng=None):
        """Run all layers. Returns (prediction, cache); cache is None unless ``train``."""
        x = np.asarray(x, dtype=np.float64)
        entries = []
        for i, layer in enumerate(self.layers):
            try:
                layer.output_shape(x.shape)
                x, c = layer.forward(x, train, rng)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
            entries.append(c)
        return x, (ForwardCache(self.version, entries) if train else None)

    def backward(self, cache: ForwardCache | None, loss_grad) -> dict[str, np.ndarray]:
        if cache is None:
            raise StaleCacheError("no training-mode forward cache to backpropagate through")
        if cache.version != self.version:
            raise StaleCacheError("parameters changed since the forward pass")
        grads = {}
        dy = np.asarray(loss_grad, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            dy, g = self.layers[i].backward(cache.entries[i], dy)
            for name, arr in g.items():
                grads[f"{i}.{name}"] = arr
        return grads

    def predict(self, x) -> np.ndarray:
        return self.forward(x, train=False)[0].ravel()

    def bump(self):
        self.version += 1


def he_uniform_init(model: Model, seed: int) -> Model:
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        if isinstance(layer, (Conv2d, Dense)):
            w = layer.params["W"]
            fan_in = int(np.prod(w.shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            layer.params["W"] = rng.uniform(-bound, bound, size=w.shape)
            layer.params["b"] = np.zeros_like(layer.params["b"])
    model.bump()
    return model


def default_architecture(seed: int = 0, channels=(16, 32, 64), dense=(128, 32),
                         dropout_p: float = 0.25, input_size: int = 30) -> Model:
    """Three conv-BN-ReLU-pool stages, then dense-ReLU-dropout twice and a linear unit."""
    layers: list[Layer] = []
    in_ch, size = 1, input_size
    for ch in channels:
        layers += [Conv2d(in_ch, ch, 3, 1, 1), BatchNorm(ch), ReLU(), MaxPool(2, 2)]
        in_ch, size = ch, size // 2
    layers.append(Flatten())
    n_in = in_ch * size * size
    for width in dense:
        layers += [Dense(n_in, width), ReLU(), Dropout(dropout_p)]
        n_in = width
    layers.append(Dense(n_in, 1))
    return he_uniform_init(Model(layers), seed)


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    if pred.size == 0:
        raise ValueError("empty batch")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class AdamState:
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update, in place. Returns ``params``."""
    if set(grads) - set(params):
        raise ValueError(f"gradients for unknown parameters {sorted(set(grads) - set(params))}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def model_adam_step(model: Model, grads, state: AdamState):
    adam_step(model.params(), grads, state)
    model.bump()
