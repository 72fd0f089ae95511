"""Forward/backward kernels on NHWC arrays.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Kernels keep the input dtype
(float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


def _check4(x, name="input"):
    if x.ndim != 4:
        raise ShapeMismatch(f"{name} must be 4-D (N, H, W, C), got shape {x.shape}")


def same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """Return (out, pad_before, pad_after) for TF-style 'same' padding."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def output_size(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    if padding == "valid":
        if size < k:
            raise ShapeMismatch(f"input extent {size} smaller than kernel {k}")
        return (size - k) // stride + 1
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _pad(x, kh, kw, stride, padding):
    n, h, w, c = x.shape
    if padding == "valid":
        ho = output_size(h, kh, stride, "valid")
        wo = output_size(w, kw, stride, "valid")
        return x, (0, 0, 0, 0), ho, wo
    ho, pt, pb = same_padding(h, kh, stride)
    wo, pl, pr = same_padding(w, kw, stride)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return x, (pt, pb, pl, pr), ho, wo


def _unpad(dxp, pads, h, w):
    pt, _, pl, _ = pads
    return dxp[:, pt : pt + h, pl : pl + w, :]


# -- convolution ---------------------------------------------------------------


def conv2d_forward(x, w, b=None, stride: int = 1, padding: str = "same"):
    """Cross-correlation of ``x (N,H,W,Cin)`` with ``w (kh,kw,Cin,Cout)``."""
    _check4(x)
    if w.ndim != 4 or w.shape[2] != x.shape[3]:
        raise ShapeMismatch(f"kernel {w.shape} does not match input channels {x.shape[3]}")
    kh, kw, cin, cout = w.shape
    n = x.shape[0]
    if (kh, kw, stride) == (1, 1, 1):
        cols = x.reshape(-1, cin)
        y = cols @ w.reshape(cin, cout)
        ho, wo, pads, xp_shape = x.shape[1], x.shape[2], (0, 0, 0, 0), x.shape
    else:
        xp, pads, ho, wo = _pad(x, kh, kw, stride, padding)
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
        # (N, Ho, Wo, C, kh, kw) -> (N*Ho*Wo, kh*kw*C) in (i, j, c) order to match w
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
        y = cols @ w.reshape(kh * kw * cin, cout)
        xp_shape = xp.shape
    if b is not None:
        y = y + b
    y = y.reshape(n, ho, wo, cout)
    return y, (x.shape, xp_shape, pads, cols, w, stride, b is not None)


def conv2d_backward(dy, cache):
    """Return ``(dx, dw, db)``; ``db`` is None for bias-free convolutions."""
    x_shape, xp_shape, pads, cols, w, stride, has_bias = cache
    kh, kw, cin, cout = w.shape
    n, ho, wo, _ = dy.shape
    dyf = dy.reshape(-1, cout)
    dw = (cols.T @ dyf).reshape(w.shape)
    db = dyf.sum(axis=0) if has_bias else None
    dcols = dyf @ w.reshape(-1, cout).T
    if (kh, kw, stride) == (1, 1, 1):
        return dcols.reshape(x_shape), dw, db
    dcols = dcols.reshape(n, ho, wo, kh, kw, cin)
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
    return _unpad(dxp, pads, x_shape[1], x_shape[2]), dw, db


def depthwise_conv2d_forward(x, w, b=None, stride: int = 1, padding: str = "same"):
    """Per-channel cross-correlation; ``w`` has shape ``(kh, kw, C)``."""
    _check4(x)
    if w.ndim != 3 or w.shape[2] != x.shape[3]:
        raise ShapeMismatch(f"depthwise kernel {w.shape} does not match {x.shape[3]} channels")
    kh, kw, c = w.shape
    xp, pads, ho, wo = _pad(x, kh, kw, stride, padding)
    y = np.zeros((x.shape[0], ho, wo, c), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            y += xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] * w[i, j]
    if b is not None:
        y += b
    return y, (x.shape, xp, pads, w, stride, b is not None)


def depthwise_conv2d_backward(dy, cache):
    x_shape, xp, pads, w, stride, has_bias = cache
    kh, kw, c = w.shape
    _, ho, wo, _ = dy.shape
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
            dw[i, j] = np.einsum("nhwc,nhwc->c", dy, xp[sl])
            dxp[sl] += dy * w[i, j]
    db = dy.sum(axis=(0, 1, 2)) if has_bias else None
    return _unpad(dxp, pads, x_shape[1], x_shape[2]), dw, db


# -- normalization -------------------------------------------------------------


def batch_norm_forward(x, gamma, beta, running_mean, running_var, *, training: bool,
                       momentum: float = 0.99, eps: float = 1e-3):
    """Per-channel normalization over all but the last axis.

    In training mode the batch statistics are used and the running averages
    are updated in place (``r = momentum*r + (1-momentum)*batch``); in
    inference mode the running averages are used.
    """
    c = x.shape[-1]
    for name, arr in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean),
                      ("running_var", running_var)):
        if arr.shape != (c,):
            raise ShapeMismatch(f"{name} has shape {arr.shape}, expected ({c},)")
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean.copy(), running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    return y, (xhat, inv_std, gamma, training)


def batch_norm_backward(dy, cache):
    """Return ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, training = cache
    axes = tuple(range(dy.ndim - 1))
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * xhat).sum(axis=axes)
    if not training:
        return dy * (gamma * inv_std), dgamma, dbeta
    m = dy.size // dy.shape[-1]
    dxhat = dy * gamma
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


# -- activations ---------------------------------------------------------------


def relu(x):
    return np.maximum(x, 0)


def relu6(x):
    return np.clip(x, 0, 6)


def hard_sigmoid(x):
    return relu6(x + 3) / 6


def h_swish(x):
    return x * relu6(x + 3) / 6


def activation_forward(x, kind: str):
    if kind == "relu":
        y = relu(x)
    elif kind == "relu6":
        y = relu6(x)
    elif kind == "h_swish":
        y = h_swish(x)
    elif kind == "hard_sigmoid":
        y = hard_sigmoid(x)
    elif kind in ("linear", None):
        y = x
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return y, (x, kind)


def activation_grad(x, kind: str):
    """Elementwise derivative (one-sided choice at kinks)."""
    one = x.dtype.type(1)
    zero = x.dtype.type(0)
    if kind == "relu":
        return np.where(x > 0, one, zero)
    if kind == "relu6":
        return np.where((x > 0) & (x < 6), one, zero)
    if kind == "hard_sigmoid":
        return np.where((x > -3) & (x < 3), one / 6, zero)
    if kind == "h_swish":
        mid = (2 * x + 3) / 6
        return np.where(x <= -3, zero, np.where(x >= 3, one, mid))
    if kind in ("linear", None):
        return np.ones_like(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(dy, cache):
    x, kind = cache
    return dy * activation_grad(x, kind)


# -- pooling, dense, softmax ---------------------------------------------------


def global_avg_pool_forward(x):
    _check4(x)
    return x.mean(axis=(1, 2), keepdims=True), x.shape


def global_avg_pool_backward(dy, x_shape):
    _, h, w, _ = x_shape
    return np.broadcast_to(dy / (h * w), x_shape).copy()


def dense_forward(x, w, b=None):
    x2 = x.reshape(x.shape[0], -1)
    if w.ndim != 2 or w.shape[0] != x2.shape[1]:
        raise ShapeMismatch(f"dense weights {w.shape} do not accept {x2.shape[1]} inputs")
    y = x2 @ w
    if b is not None:
        y = y + b
    return y, (x.shape, x2, w, b is not None)


def dense_backward(dy, cache):
    x_shape, x2, w, has_bias = cache
    dw = x2.T @ dy
    db = dy.sum(axis=0) if has_bias else None
    return (dy @ w.T).reshape(x_shape), dw, db


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dprobs, probs):
    return probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
