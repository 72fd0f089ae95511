"""Layer objects wrapping the functional kernels.

A layer owns learnable ``params``, non-learnable ``state`` (batch-norm
running statistics) and, after :meth:`Layer.backward`, ``grads`` with the
same keys as ``params``. Composite layers (squeeze-excite, inverted
residual) hold named ``children`` and expose their arrays under dotted
names such as ``"dw_bn.gamma"``.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from ..errors import ShapeMismatch
from . import functional as F

__all__ = [
    "Layer",
    "Conv2D",
    "DepthwiseConv2D",
    "BatchNorm",
    "Activation",
    "SqueezeExcite",
    "InvertedResidual",
    "GlobalAvgPool",
    "Dense",
    "Softmax",
    "he_uniform",
    "make_divisible",
]


def he_uniform(rng, shape, fan_in, dtype):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def make_divisible(value: float, divisor: int = 8) -> int:
    """Round `value` up to a multiple of `divisor`."""
    return int(math.ceil(value / divisor) * divisor)


class Layer:
    kind = "layer"

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Layer] = {}
        self.trainable = True
        self._cache = None

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def hyperparams(self) -> dict:
        return {}

    def __call__(self, x, training: bool = False):
        return self.forward(x, training)

    # -- array bookkeeping -----------------------------------------------------

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, "Layer", str]]:
        """Yield ``(qualified_name, owner, key)`` for every learnable array."""
        for key in self.params:
            yield prefix + key, self, key
        for name, child in self.children.items():
            yield from child.named_params(f"{prefix}{name}.")

    def named_arrays(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        """All arrays, learnable first then state, children after own arrays."""
        for key, arr in self.params.items():
            yield prefix + key, arr
        for key, arr in self.state.items():
            yield prefix + key, arr
        for name, child in self.children.items():
            yield from child.named_arrays(f"{prefix}{name}.")

    def n_params(self) -> int:
        return sum(owner.params[key].size for _, owner, key in self.named_params())

    def astype(self, dtype) -> "Layer":
        self.dtype = np.dtype(dtype)
        for d in (self.params, self.state):
            for k in d:
                d[k] = d[k].astype(self.dtype)
        for child in self.children.values():
            child.astype(dtype)
        return self

    def __repr__(self):
        hp = ", ".join(f"{k}={v}" for k, v in self.hyperparams().items())
        return f"{type(self).__name__}({hp})"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding="same",
                 use_bias=False, rng=None, dtype=np.float32):
        super().__init__(dtype)
        rng = np.random.default_rng(rng)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        self.use_bias = use_bias
        k = kernel_size
        self.params["w"] = he_uniform(rng, (k, k, in_channels, out_channels), k * k * in_channels, self.dtype)
        if use_bias:
            self.params["b"] = np.zeros(out_channels, self.dtype)

    def hyperparams(self):
        return dict(in_channels=self.in_channels, out_channels=self.out_channels,
                    kernel_size=self.kernel_size, stride=self.stride, padding=self.padding,
                    use_bias=self.use_bias)

    def forward(self, x, training=False):
        y, self._cache = F.conv2d_forward(x, self.params["w"], self.params.get("b"), self.stride, self.padding)
        return y

    def backward(self, dy):
        dx, dw, db = F.conv2d_backward(dy, self._cache)
        self.grads["w"] = dw
        if db is not None:
            self.grads["b"] = db
        return dx

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.in_channels:
            raise ShapeMismatch(f"{self!r} got {c} input channels")
        k, s, p = self.kernel_size, self.stride, self.padding
        return F.output_size(h, k, s, p), F.output_size(w, k, s, p), self.out_channels


class DepthwiseConv2D(Layer):
    kind = "depthwise_conv"

    def __init__(self, channels, kernel_size=3, stride=1, padding="same", use_bias=False,
                 rng=None, dtype=np.float32):
        super().__init__(dtype)
        rng = np.random.default_rng(rng)
        self.channels, self.kernel_size, self.stride, self.padding = channels, kernel_size, stride, padding
        self.use_bias = use_bias
        k = kernel_size
        self.params["w"] = he_uniform(rng, (k, k, channels), k * k, self.dtype)
        if use_bias:
            self.params["b"] = np.zeros(channels, self.dtype)

    def hyperparams(self):
        return dict(channels=self.channels, kernel_size=self.kernel_size, stride=self.stride,
                    padding=self.padding, use_bias=self.use_bias)

    def forward(self, x, training=False):
        y, self._cache = F.depthwise_conv2d_forward(x, self.params["w"], self.params.get("b"),
                                                    self.stride, self.padding)
        return y

    def backward(self, dy):
        dx, dw, db = F.depthwise_conv2d_backward(dy, self._cache)
        self.grads["w"] = dw
        if db is not None:
            self.grads["b"] = db
        return dx

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.channels:
            raise ShapeMismatch(f"{self!r} got {c} input channels")
        k, s, p = self.kernel_size, self.stride, self.padding
        return F.output_size(h, k, s, p), F.output_size(w, k, s, p), c


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, channels, momentum=0.99, eps=1e-3, dtype=np.float32):
        super().__init__(dtype)
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels, self.dtype)
        self.params["beta"] = np.zeros(channels, self.dtype)
        self.state["running_mean"] = np.zeros(channels, self.dtype)
        self.state["running_var"] = np.ones(channels, self.dtype)

    def hyperparams(self):
        return dict(channels=self.channels, momentum=self.momentum, eps=self.eps)

    def forward(self, x, training=False):
        y, self._cache = F.batch_norm_forward(
            x, self.params["gamma"], self.params["beta"], self.state["running_mean"],
            self.state["running_var"], training=training, momentum=self.momentum, eps=self.eps,
        )
        return y.astype(x.dtype, copy=False)

    def backward(self, dy):
        dx, dg, db = F.batch_norm_backward(dy, self._cache)
        self.grads["gamma"], self.grads["beta"] = dg, db
        return dx

    def output_shape(self, shape):
        if shape[-1] != self.channels:
            raise ShapeMismatch(f"{self!r} got {shape[-1]} channels")
        return shape


class Activation(Layer):
    kind = "activation"

    def __init__(self, fn="relu", dtype=np.float32):
        super().__init__(dtype)
        F.activation_forward(np.zeros(1), fn)  # validates the name
        self.fn = fn

    def hyperparams(self):
        return dict(fn=self.fn)

    def forward(self, x, training=False):
        y, self._cache = F.activation_forward(x, self.fn)
        return y

    def backward(self, dy):
        return F.activation_backward(dy, self._cache)


class SqueezeExcite(Layer):
    """Channel gate: global mean -> dense/relu -> dense/hard-sigmoid -> scale."""

    kind = "se_block"

    def __init__(self, channels, se_ratio=4, rng=None, dtype=np.float32):
        super().__init__(dtype)
        rng = np.random.default_rng(rng)
        self.channels, self.se_ratio = channels, se_ratio
        self.reduced = make_divisible(channels / se_ratio, 8)
        r = self.reduced
        self.params["reduce_w"] = he_uniform(rng, (channels, r), channels, self.dtype)
        self.params["reduce_b"] = np.zeros(r, self.dtype)
        self.params["expand_w"] = he_uniform(rng, (r, channels), r, self.dtype)
        self.params["expand_b"] = np.zeros(channels, self.dtype)

    def hyperparams(self):
        return dict(channels=self.channels, se_ratio=self.se_ratio)

    def forward(self, x, training=False):
        F._check4(x)
        if x.shape[-1] != self.channels:
            raise ShapeMismatch(f"{self!r} got {x.shape[-1]} channels")
        p = self.params
        s = x.mean(axis=(1, 2))
        z1 = s @ p["reduce_w"] + p["reduce_b"]
        a1 = F.relu(z1)
        z2 = a1 @ p["expand_w"] + p["expand_b"]
        gate = F.hard_sigmoid(z2)
        self._cache = (x, s, z1, a1, z2, gate)
        return x * gate[:, None, None, :]

    def gate(self, x):
        p = self.params
        s = x.mean(axis=(1, 2))
        return F.hard_sigmoid(F.relu(s @ p["reduce_w"] + p["reduce_b"]) @ p["expand_w"] + p["expand_b"])

    def backward(self, dy):
        x, s, z1, a1, z2, gate = self._cache
        p = self.params
        _, h, w, _ = x.shape
        dgate = np.einsum("nhwc,nhwc->nc", dy, x)
        dz2 = dgate * F.activation_grad(z2, "hard_sigmoid")
        self.grads["expand_w"] = a1.T @ dz2
        self.grads["expand_b"] = dz2.sum(axis=0)
        dz1 = (dz2 @ p["expand_w"].T) * F.activation_grad(z1, "relu")
        self.grads["reduce_w"] = s.T @ dz1
        self.grads["reduce_b"] = dz1.sum(axis=0)
        ds = dz1 @ p["reduce_w"].T
        return dy * gate[:, None, None, :] + (ds / (h * w))[:, None, None, :]


class InvertedResidual(Layer):
    """expand 1x1 -> BN -> act -> depthwise -> BN -> act -> [SE] -> project 1x1 -> BN.

    The input is added back when ``stride == 1`` and channel counts match.
    With ``expansion == 1`` the expansion stage is omitted.
    """

    kind = "inverted_residual"

    def __init__(self, in_channels, out_channels, expansion=4, kernel_size=3, stride=1,
                 activation="relu", use_se=False, se_ratio=4, momentum=0.99, eps=1e-3,
                 rng=None, dtype=np.float32):
        super().__init__(dtype)
        rng = np.random.default_rng(rng)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.expansion, self.kernel_size, self.stride = expansion, kernel_size, stride
        self.activation, self.use_se, self.se_ratio = activation, use_se, se_ratio
        self.hidden = in_channels * expansion
        hid = self.hidden
        ch = self.children
        if expansion != 1:
            ch["expand"] = Conv2D(in_channels, hid, 1, rng=rng, dtype=dtype)
            ch["expand_bn"] = BatchNorm(hid, momentum, eps, dtype=dtype)
            ch["expand_act"] = Activation(activation, dtype=dtype)
        ch["dw"] = DepthwiseConv2D(hid, kernel_size, stride, rng=rng, dtype=dtype)
        ch["dw_bn"] = BatchNorm(hid, momentum, eps, dtype=dtype)
        ch["dw_act"] = Activation(activation, dtype=dtype)
        if use_se:
            ch["se"] = SqueezeExcite(hid, se_ratio, rng=rng, dtype=dtype)
        ch["project"] = Conv2D(hid, out_channels, 1, rng=rng, dtype=dtype)
        ch["project_bn"] = BatchNorm(out_channels, momentum, eps, dtype=dtype)

    @property
    def residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels

    def hyperparams(self):
        return dict(in_channels=self.in_channels, out_channels=self.out_channels,
                    expansion=self.expansion, kernel_size=self.kernel_size, stride=self.stride,
                    activation=self.activation, use_se=self.use_se, se_ratio=self.se_ratio)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ShapeMismatch(f"{self!r} got input of shape {x.shape}")
        y = x
        for child in self.children.values():
            y = child.forward(y, training)
        if self.residual:
            y = y + x
        return y

    def backward(self, dy):
        g = dy
        for child in reversed(list(self.children.values())):
            g = child.backward(g)
        if self.residual:
            g = g + dy
        return g

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.in_channels:
            raise ShapeMismatch(f"{self!r} got {c} input channels")
        s = self.stride
        return math.ceil(h / s), math.ceil(w / s), self.out_channels


class GlobalAvgPool(Layer):
    """Spatial mean; output is (N, C)."""

    kind = "global_avg_pool"

    def forward(self, x, training=False):
        y, self._cache = F.global_avg_pool_forward(x)
        return y.reshape(x.shape[0], x.shape[3])

    def backward(self, dy):
        n, c = dy.shape
        return F.global_avg_pool_backward(dy.reshape(n, 1, 1, c), self._cache)

    def output_shape(self, shape):
        return (shape[-1],)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, activation: Optional[str] = None,
                 use_bias=True, rng=None, dtype=np.float32):
        super().__init__(dtype)
        rng = np.random.default_rng(rng)
        self.in_features, self.out_features = in_features, out_features
        self.activation = activation or "linear"
        self.use_bias = use_bias
        self.params["w"] = he_uniform(rng, (in_features, out_features), in_features, self.dtype)
        if use_bias:
            self.params["b"] = np.zeros(out_features, self.dtype)

    def hyperparams(self):
        return dict(in_features=self.in_features, out_features=self.out_features,
                    activation=self.activation, use_bias=self.use_bias)

    def forward(self, x, training=False):
        z, dcache = F.dense_forward(x, self.params["w"], self.params.get("b"))
        y, acache = F.activation_forward(z, self.activation)
        self._cache = (dcache, acache)
        return y

    def backward(self, dy):
        dcache, acache = self._cache
        dz = F.activation_backward(dy, acache)
        dx, dw, db = F.dense_backward(dz, dcache)
        self.grads["w"] = dw
        if db is not None:
            self.grads["b"] = db
        return dx

    def output_shape(self, shape):
        if math.prod(shape) != self.in_features:
            raise ShapeMismatch(f"{self!r} got input of shape {shape}")
        return (self.out_features,)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False):
        y = F.softmax(x)
        self._cache = y
        return y

    def backward(self, dy):
        return F.softmax_backward(dy, self._cache)
