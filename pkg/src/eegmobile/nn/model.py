"""Sequential container, the micro EEGMobile network and checkpoints."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import CheckpointError, ShapeMismatch
from .layers import (
    Activation,
    BatchNorm,
    Conv2D,
    Dense,
    GlobalAvgPool,
    InvertedResidual,
    Layer,
    Softmax,
)

__all__ = [
    "Sequential",
    "BlockSpec",
    "MicroNetConfig",
    "build_micronet",
    "count_params",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]


class Sequential:
    """Ordered list of layers; the unit of freezing is a top-level layer index."""

    def __init__(self, layers: Sequence[Layer], input_shape: tuple, config=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.config = config
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    @property
    def dtype(self):
        return self.layers[0].dtype

    def astype(self, dtype) -> "Sequential":
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def forward(self, x, training: bool = False, *, logits: bool = False):
        """Run the network; frozen layers always run in inference mode.

        With ``logits=True`` a trailing softmax layer is skipped.
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"model expects (N, {self.input_shape}), got {x.shape}")
        layers = self.layers
        if logits and layers and isinstance(layers[-1], Softmax):
            layers = layers[:-1]
        for layer in layers:
            x = layer.forward(x, training and layer.trainable)
        return x

    __call__ = forward

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0,) + tuple(self.output_shape))

    def backward(self, dy, *, from_logits: bool = True):
        """Backpropagate `dy` and fill each trainable layer's ``grads``.

        `dy` is the gradient w.r.t. the pre-softmax logits when `from_logits`
        is set. Propagation stops below the first trainable layer.
        """
        layers = self.layers
        if from_logits and layers and isinstance(layers[-1], Softmax):
            layers = layers[:-1]
        first = next((i for i, l in enumerate(layers) if l.trainable and l.n_params()), None)
        if first is None:
            return None
        g = dy
        for i in range(len(layers) - 1, first - 1, -1):
            g = layers[i].backward(g)
        return g

    # -- parameters ---------------------------------------------------------------

    def named_params(self, trainable_only: bool = False):
        for i, layer in enumerate(self.layers):
            if trainable_only and not layer.trainable:
                continue
            yield from layer.named_params(f"{i}.")

    def named_arrays(self):
        for i, layer in enumerate(self.layers):
            yield from layer.named_arrays(f"{i}.")

    def set_trainable(self, indices: Iterable[int]) -> "Sequential":
        keep = set(indices)
        for i, layer in enumerate(self.layers):
            layer.trainable = i in keep
        return self

    def layer_digest(self, indices: Iterable[int]) -> str:
        """SHA-256 over every array (params and running stats) of the given layers."""
        h = hashlib.sha256()
        for i in sorted(indices):
            for name, arr in self.layers[i].named_arrays(f"{i}."):
                h.update(name.encode())
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def summary(self) -> str:
        rows = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = layer.output_shape(shape)
            flag = "" if layer.trainable else "  (frozen)"
            rows.append(f"{i:>3}  {layer.kind:<18} {str(shape):<16} {layer.n_params():>8}{flag}")
        rows.append(f"total {count_params(self)}  trainable {count_params(self, True)}")
        return "\n".join(rows)


def count_params(model: Sequential, trainable_only: bool = False) -> int:
    """Number of learnable scalars (BN running statistics are state, not params)."""
    return sum(
        layer.n_params() for layer in model.layers if layer.trainable or not trainable_only
    )


@dataclass(frozen=True)
class BlockSpec:
    out_channels: int
    expansion: int
    kernel_size: int = 3
    stride: int = 1
    activation: str = "relu"
    use_se: bool = False


_DEFAULT_BLOCKS = (
    BlockSpec(16, 4, 3, 1, "relu", False),
    BlockSpec(24, 3, 3, 2, "h_swish", True),
    BlockSpec(40, 3, 3, 2, "h_swish", True),
)


@dataclass(frozen=True)
class MicroNetConfig:
    """Desk-scale MobileNetV3-style network with the EEGMobile head."""

    input_shape: tuple = (64, 64, 3)
    stem_channels: int = 16
    stem_stride: int = 2
    stem_activation: str = "relu"
    blocks: tuple = _DEFAULT_BLOCKS
    se_ratio: int = 4
    head_width: int = 224
    n_classes: int = 5
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MicroNetConfig":
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        d["blocks"] = tuple(BlockSpec(**b) for b in d["blocks"])
        return cls(**d)

    @property
    def head_start(self) -> int:
        """Index of the first head layer (global average pool)."""
        return 3 + len(self.blocks)


def build_micronet(cfg: Optional[MicroNetConfig] = None, seed: int = 0, dtype=np.float32) -> Sequential:
    """Layer list: stem conv, BN, act, inverted residuals, GAP, dense-relu, dense, softmax."""
    cfg = cfg or MicroNetConfig()
    rng = np.random.default_rng(seed)
    c_in = cfg.input_shape[-1]
    layers: list[Layer] = [
        Conv2D(c_in, cfg.stem_channels, 3, cfg.stem_stride, rng=rng, dtype=dtype),
        BatchNorm(cfg.stem_channels, cfg.bn_momentum, cfg.bn_eps, dtype=dtype),
        Activation(cfg.stem_activation, dtype=dtype),
    ]
    c = cfg.stem_channels
    for b in cfg.blocks:
        layers.append(
            InvertedResidual(c, b.out_channels, b.expansion, b.kernel_size, b.stride, b.activation,
                             b.use_se, cfg.se_ratio, cfg.bn_momentum, cfg.bn_eps, rng=rng, dtype=dtype)
        )
        c = b.out_channels
    layers += [
        GlobalAvgPool(dtype=dtype),
        Dense(c, cfg.head_width, "relu", rng=rng, dtype=dtype),
        Dense(cfg.head_width, cfg.n_classes, None, rng=rng, dtype=dtype),
        Softmax(dtype=dtype),
    ]
    model = Sequential(layers, cfg.input_shape, config=cfg)
    if model.output_shape != (cfg.n_classes,):
        raise ShapeMismatch(f"network ends in {model.output_shape}, expected ({cfg.n_classes},)")
    return model


# -- checkpoints -----------------------------------------------------------------
#
# b"EGMW" u16 version | u32 config-json length, config JSON | u32 n_layers
# per layer: u8 len, kind | u8 trainable | u16 n_arrays
#   per array: u8 len, name | u8 dtype (0=f4, 1=f8) | u8 ndim | ndim*u32 dims | raw LE data

CHECKPOINT_MAGIC = b"EGMW"
_CKPT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def save_checkpoint(model: Sequential, path) -> None:
    if not isinstance(model.config, MicroNetConfig):
        raise CheckpointError("only models built by build_micronet can be checkpointed")
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    out = [CHECKPOINT_MAGIC, struct.pack("<HI", _CKPT_VERSION, len(cfg)), cfg,
           struct.pack("<I", len(model.layers))]
    for layer in model.layers:
        arrays = list(layer.named_arrays())
        kind = layer.kind.encode()
        out.append(struct.pack("<B", len(kind)) + kind)
        out.append(struct.pack("<BH", int(layer.trainable), len(arrays)))
        for name, arr in arrays:
            nm = name.encode()
            out.append(struct.pack("<B", len(nm)) + nm)
            out.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_checkpoint(path) -> Sequential:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("not an EGMW checkpoint")
    version, cfg_len = r.unpack("<HI")
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg = MicroNetConfig.from_dict(json.loads(r.take(cfg_len)))
    (n_layers,) = r.unpack("<I")
    stored = []
    dtype = None
    for _ in range(n_layers):
        (klen,) = r.unpack("<B")
        kind = r.take(klen).decode()
        trainable, n_arrays = r.unpack("<BH")
        arrays = {}
        for _ in range(n_arrays):
            (nlen,) = r.unpack("<B")
            name = r.take(nlen).decode()
            code, ndim = r.unpack("<BB")
            shape = r.unpack(f"<{ndim}I") if ndim else ()
            dt = _DTYPES[code]
            dtype = dtype or dt
            count = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
        stored.append((kind, bool(trainable), arrays))
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint")

    model = build_micronet(cfg, dtype=(dtype or np.float32).newbyteorder("="))
    if len(stored) != len(model.layers):
        raise CheckpointError(f"checkpoint has {len(stored)} layers, config builds {len(model.layers)}")
    for layer, (kind, trainable, arrays) in zip(model.layers, stored):
        if layer.kind != kind:
            raise CheckpointError(f"layer kind {kind!r} does not match {layer.kind!r}")
        targets = dict(_array_slots(layer))
        if set(targets) != set(arrays):
            raise CheckpointError(f"array names differ for {kind}: {sorted(set(targets) ^ set(arrays))}")
        for name, arr in arrays.items():
            owner, store, key = targets[name]
            if store[key].shape != arr.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != {store[key].shape}")
            store[key] = arr.astype(store[key].dtype)
        layer.trainable = trainable
    return model


def _array_slots(layer: Layer, prefix: str = ""):
    for key in layer.params:
        yield prefix + key, (layer, layer.params, key)
    for key in layer.state:
        yield prefix + key, (layer, layer.state, key)
    for name, child in layer.children.items():
        yield from _array_slots(child, f"{prefix}{name}.")
