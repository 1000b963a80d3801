"""Hot loops of the conv/pool layers, numba-compiled with a numpy twin.

The ``*_numpy`` functions are the reference path; the public names bind to
the numba versions unless ``AODBENCH_NUMBA=0``. im2col, col2im and pooling
agree bit for bit across paths; batch-norm sums differ only in rounding.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._accel import JIT_OPTIONS, USE_NUMBA, njit


def out_size(n: int, k: int, stride: int, pad: int = 0) -> int:
    return (n + 2 * pad - k) // stride + 1


# im2col: x[N, C, H, W] (already padded) -> cols[N*Ho*Wo, C*k*k]

def im2col_numpy(x, k, stride):
    n, c, h, w = x.shape
    ho, wo = out_size(h, k, stride), out_size(w, k, stride)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # win: N, C, Ho, Wo, k, k
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def col2im_numpy(cols, shape, k, stride):
    n, c, h, w = shape
    ho, wo = out_size(h, k, stride), out_size(w, k, stride)
    g = cols.reshape(n, ho, wo, c, k, k)
    out = np.zeros(shape)
    # descending (i, j): the order in which the numba loop meets each output cell
    for i in range(k - 1, -1, -1):
        for j in range(k - 1, -1, -1):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def maxpool_forward_numpy(x, k, stride):
    """Window maxima plus flat (row-major, first occurrence) argmax within each window."""
    n, c, h, w = x.shape
    ho, wo = out_size(h, k, stride), out_size(w, k, stride)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    win = win.reshape(n, c, ho, wo, k * k)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward_numpy(grad, arg, shape, k, stride):
    n, c, ho, wo = grad.shape
    out = np.zeros(shape)
    di, dj = np.divmod(arg, k)
    rows = np.arange(ho)[None, None, :, None] * stride + di
    cols = np.arange(wo)[None, None, None, :] * stride + dj
    nn_ = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    # windows may overlap when stride < k, so accumulate
    np.add.at(out, (nn_, cc, rows, cols), grad)
    return out


@njit(**JIT_OPTIONS)
def _im2col_nb(x, k, stride):
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    cols = np.empty((n * ho * wo, c * k * k))
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                r = (b * ho + oy) * wo + ox
                q = 0
                for ch in range(c):
                    for i in range(k):
                        for j in range(k):
                            cols[r, q] = x[b, ch, oy * stride + i, ox * stride + j]
                            q += 1
    return cols


@njit(**JIT_OPTIONS)
def _col2im_nb(cols, n, c, h, w, k, stride):
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((n, c, h, w))
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                r = (b * ho + oy) * wo + ox
                q = 0
                for ch in range(c):
                    for i in range(k):
                        for j in range(k):
                            out[b, ch, oy * stride + i, ox * stride + j] += cols[r, q]
                            q += 1
    return out


@njit(**JIT_OPTIONS)
def _maxpool_forward_nb(x, k, stride):
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.empty((n, c, ho, wo))
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    for b in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    best = x[b, ch, oy * stride, ox * stride]
                    bi = 0
                    for i in range(k):
                        for j in range(k):
                            v = x[b, ch, oy * stride + i, ox * stride + j]
                            if v > best:
                                best = v
                                bi = i * k + j
                    out[b, ch, oy, ox] = best
                    arg[b, ch, oy, ox] = bi
    return out, arg


@njit(**JIT_OPTIONS)
def _maxpool_backward_nb(grad, arg, n, c, h, w, k, stride):
    ho, wo = grad.shape[2], grad.shape[3]
    out = np.zeros((n, c, h, w))
    for b in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    a = arg[b, ch, oy, ox]
                    out[b, ch, oy * stride + a // k, ox * stride + a % k] += grad[b, ch, oy, ox]
    return out


# batch norm over (N, H, W) per channel of a contiguous NCHW array

def bn_forward_numpy(x, gamma, beta, eps):
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, xhat, mean, var, inv


def bn_backward_numpy(dy, xhat, gamma, inv):
    m = dy.size // dy.shape[1]
    dbeta = dy.sum(axis=(0, 2, 3))
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    # dxhat = dy * gamma, so its channel sums follow from dbeta and dgamma
    scale = (gamma * inv / m)[None, :, None, None]
    dx = scale * (m * dy - dbeta[None, :, None, None] - xhat * dgamma[None, :, None, None])
    return dx, dgamma, dbeta


@njit(**JIT_OPTIONS)
def _bn_forward_nb(x, gamma, beta, eps):
    n, c, h, w = x.shape
    m = n * h * w
    mean = np.zeros(c)
    var = np.zeros(c)
    inv = np.empty(c)
    for ch in range(c):
        s = 0.0
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    s += x[b, ch, i, j]
        mu = s / m
        ss = 0.0
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    d = x[b, ch, i, j] - mu
                    ss += d * d
        mean[ch] = mu
        var[ch] = ss / m
        inv[ch] = 1.0 / np.sqrt(var[ch] + eps)
    xhat = np.empty_like(x)
    y = np.empty_like(x)
    for b in range(n):
        for ch in range(c):
            mu, iv, g, bt = mean[ch], inv[ch], gamma[ch], beta[ch]
            for i in range(h):
                for j in range(w):
                    v = (x[b, ch, i, j] - mu) * iv
                    xhat[b, ch, i, j] = v
                    y[b, ch, i, j] = g * v + bt
    return y, xhat, mean, var, inv


@njit(**JIT_OPTIONS)
def _bn_backward_nb(dy, xhat, gamma, inv):
    n, c, h, w = dy.shape
    m = n * h * w
    dgamma = np.zeros(c)
    dbeta = np.zeros(c)
    for b in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    dbeta[ch] += dy[b, ch, i, j]
                    dgamma[ch] += dy[b, ch, i, j] * xhat[b, ch, i, j]
    dx = np.empty_like(dy)
    for b in range(n):
        for ch in range(c):
            scale = gamma[ch] * inv[ch] / m
            db, dg = dbeta[ch], dgamma[ch]
            for i in range(h):
                for j in range(w):
                    dx[b, ch, i, j] = scale * (m * dy[b, ch, i, j] - db - xhat[b, ch, i, j] * dg)
    return dx, dgamma, dbeta


def bn_forward_numba(x, gamma, beta, eps):
    return _bn_forward_nb(np.ascontiguousarray(x, dtype=np.float64), gamma, beta, eps)


def bn_backward_numba(dy, xhat, gamma, inv):
    return _bn_backward_nb(np.ascontiguousarray(dy, dtype=np.float64), xhat, gamma, inv)


def im2col_numba(x, k, stride):
    return _im2col_nb(np.ascontiguousarray(x, dtype=np.float64), k, stride)


def col2im_numba(cols, shape, k, stride):
    n, c, h, w = shape
    return _col2im_nb(np.ascontiguousarray(cols, dtype=np.float64), n, c, h, w, k, stride)


def maxpool_forward_numba(x, k, stride):
    return _maxpool_forward_nb(np.ascontiguousarray(x, dtype=np.float64), k, stride)


def maxpool_backward_numba(grad, arg, shape, k, stride):
    n, c, h, w = shape
    return _maxpool_backward_nb(np.ascontiguousarray(grad, dtype=np.float64),
                                np.ascontiguousarray(arg, dtype=np.int64), n, c, h, w, k, stride)


if USE_NUMBA:
    im2col, col2im = im2col_numba, col2im_numba
    maxpool_forward, maxpool_backward = maxpool_forward_numba, maxpool_backward_numba
    bn_forward, bn_backward = bn_forward_numba, bn_backward_numba
else:
    im2col, col2im = im2col_numpy, col2im_numpy
    maxpool_forward, maxpool_backward = maxpool_forward_numpy, maxpool_backward_numpy
    bn_forward, bn_backward = bn_forward_numpy, bn_backward_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
