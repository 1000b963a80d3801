"""Layers with explicit caches and hand-derived backward passes (float64, NCHW)."""
from __future__ import annotations

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def hyper(self) -> dict:
        return {}

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def forward(self, x, train=False, rng=None):
        """Return (output, cache); cache is None in inference mode."""
        raise NotImplementedError

    def backward(self, cache, dy):
        """Return (input gradient, {param name: gradient})."""
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.hyper().items())
        return f"{type(self).__name__}({args})"


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, pad=1):
        super().__init__()
        if min(in_ch, out_ch, kernel, stride) < 1 or pad < 0:
            raise ValueError("invalid conv2d dimensions")
        self.in_ch, self.out_ch, self.kernel, self.stride, self.pad = in_ch, out_ch, kernel, stride, pad
        self.params["W"] = np.zeros((out_ch, in_ch, kernel, kernel))
        self.params["b"] = np.zeros(out_ch)

    def hyper(self):
        return {"in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": self.kernel,
                "stride": self.stride, "pad": self.pad}

    def output_shape(self, shape):
        if len(shape) != 4 or shape[1] != self.in_ch:
            raise ShapeError(f"expected [N, {self.in_ch}, H, W], got {list(shape)}")
        n, _, h, w = shape
        hp, wp = h + 2 * self.pad, w + 2 * self.pad
        if hp < self.kernel or wp < self.kernel:
            raise ShapeError(f"kernel {self.kernel} larger than padded input {hp}x{wp}")
        if (hp - self.kernel) % self.stride or (wp - self.kernel) % self.stride:
            raise ShapeError(f"stride {self.stride} does not tile padded input {hp}x{wp}")
        k, s = self.kernel, self.stride
        return (n, self.out_ch, kernels.out_size(h, k, s, self.pad), kernels.out_size(w, k, s, self.pad))

    def forward(self, x, train=False, rng=None):
        n, _, ho, wo = self.output_shape(x.shape)
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = kernels.im2col(xp, self.kernel, self.stride)
        wmat = self.params["W"].reshape(self.out_ch, -1)
        y = cols @ wmat.T + self.params["b"]
        y = y.reshape(n, ho, wo, self.out_ch).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), ((xp.shape, cols) if train else None)

    def backward(self, cache, dy):
        xp_shape, cols = cache
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        dw = (dy2.T @ cols).reshape(self.params["W"].shape)
        db = dy2.sum(axis=0)
        dcols = dy2 @ self.params["W"].reshape(self.out_ch, -1)
        dxp = kernels.col2im(dcols, xp_shape, self.kernel, self.stride)
        p = self.pad
        dx = dxp[:, :, p:xp_shape[2] - p, p:xp_shape[3] - p] if p else dxp
        return np.ascontiguousarray(dx), {"W": dw, "b": db}


class BatchNorm(Layer):
    """Per-channel batch normalization over (N, H, W), or over N for 2-D input."""

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def hyper(self):
        return {"channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def output_shape(self, shape):
        if len(shape) not in (2, 4) or shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got shape {list(shape)}")
        return shape

    def forward(self, x, train=False, rng=None):
        self.output_shape(x.shape)
        x4 = x if x.ndim == 4 else x[:, :, None, None]
        g, b = self.params["gamma"], self.params["beta"]
        if not train:
            mean = self.buffers["running_mean"][None, :, None, None]
            inv = (1.0 / np.sqrt(self.buffers["running_var"] + self.eps))[None, :, None, None]
            y = g[None, :, None, None] * ((x4 - mean) * inv) + b[None, :, None, None]
            return y.reshape(x.shape), None
        if x.size // self.channels < 2:
            raise ShapeError("batch norm needs at least 2 values per channel in train mode")
        y, xhat, mean, var, inv = kernels.bn_forward(x4, g, b, self.eps)
        mom = self.momentum
        self.buffers["running_mean"] = mom * self.buffers["running_mean"] + (1 - mom) * mean
        self.buffers["running_var"] = mom * self.buffers["running_var"] + (1 - mom) * var
        return y.reshape(x.shape), (xhat, inv, x.shape)

    def backward(self, cache, dy):
        xhat, inv, shape = cache
        dy4 = dy.reshape(xhat.shape)
        dx, dgamma, dbeta = kernels.bn_backward(dy4, xhat, self.params["gamma"], inv)
        return dx.reshape(shape), {"gamma": dgamma, "beta": dbeta}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        return x * mask, (mask if train else None)

    def backward(self, cache, dy):
        return dy * cache, {}


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, k=2, stride=None):
        super().__init__()
        self.k = k
        self.stride = k if stride is None else stride
        if self.k < 1 or self.stride < 1:
            raise ValueError("invalid pooling window")

    def hyper(self):
        return {"k": self.k, "stride": self.stride}

    def output_shape(self, shape):
        if len(shape) != 4:
            raise ShapeError(f"expected [N, C, H, W], got {list(shape)}")
        n, c, h, w = shape
        if h < self.k or w < self.k:
            raise ShapeError(f"pool window {self.k} larger than input {h}x{w}")
        return (n, c, kernels.out_size(h, self.k, self.stride), kernels.out_size(w, self.k, self.stride))

    def forward(self, x, train=False, rng=None):
        self.output_shape(x.shape)
        out, arg = kernels.maxpool_forward(x, self.k, self.stride)
        return out, ((x.shape, arg) if train else None)

    def backward(self, cache, dy):
        shape, arg = cache
        return kernels.maxpool_backward(dy, arg, shape, self.k, self.stride), {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), (x.shape if train else None)

    def backward(self, cache, dy):
        return dy.reshape(cache), {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise ValueError("invalid dense dimensions")
        self.n_in, self.n_out = n_in, n_out
        self.params["W"] = np.zeros((n_out, n_in))
        self.params["b"] = np.zeros(n_out)

    def hyper(self):
        return {"in": self.n_in, "out": self.n_out}

    def output_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.n_in:
            raise ShapeError(f"expected [N, {self.n_in}], got {list(shape)}")
        return (shape[0], self.n_out)

    def forward(self, x, train=False, rng=None):
        self.output_shape(x.shape)
        return x @ self.params["W"].T + self.params["b"], (x if train else None)

    def backward(self, cache, dy):
        return dy @ self.params["W"], {"W": dy.T @ cache, "b": dy.sum(axis=0)}


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-p) in training."""

    kind = "dropout"

    def __init__(self, p=0.25):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p

    def hyper(self):
        return {"p": self.p}

    def forward(self, x, train=False, rng=None):
        if not train:
            return x, None
        if self.p == 0:
            return x, np.ones_like(x)
        if rng is None:
            raise ValueError("dropout in train mode needs a random generator")
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, cache, dy):
        return dy * cache, {}


LAYER_TYPES = {cls.kind: cls for cls in (Conv2d, BatchNorm, ReLU, MaxPool, Flatten, Dense, Dropout)}


def dropout_forward(x, p, train, rng=None):
    return Dropout(p).forward(np.asarray(x, dtype=np.float64), train, rng)[0]


def conv2d_forward(x, weights, bias, stride=1, pad=0):
    w = np.asarray(weights, dtype=np.float64)
    layer = Conv2d(w.shape[1], w.shape[0], w.shape[2], stride, pad)
    layer.params["W"], layer.params["b"] = w, np.asarray(bias, dtype=np.float64)
    return layer.forward(np.asarray(x, dtype=np.float64))[0]


def maxpool_forward(x, k=2, stride=2):
    return MaxPool(k, stride).forward(np.asarray(x, dtype=np.float64))[0]


def dense_forward(x, weights, bias):
    w = np.asarray(weights, dtype=np.float64)
    layer = Dense(w.shape[1], w.shape[0])
    layer.params["W"], layer.params["b"] = w, np.asarray(bias, dtype=np.float64)
    return layer.forward(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]
