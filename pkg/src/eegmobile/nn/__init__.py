"""NumPy convolutional building blocks with hand-written backward passes."""

from . import functional
from .layers import (
    Activation,
    BatchNorm,
    Conv2D,
    Dense,
    DepthwiseConv2D,
    GlobalAvgPool,
    InvertedResidual,
    Layer,
    Softmax,
    SqueezeExcite,
    make_divisible,
)
from .model import (
    BlockSpec,
    MicroNetConfig,
    Sequential,
    build_micronet,
    count_params,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "functional",
    "Activation",
    "BatchNorm",
    "Conv2D",
    "Dense",
    "DepthwiseConv2D",
    "GlobalAvgPool",
    "InvertedResidual",
    "Layer",
    "Softmax",
    "SqueezeExcite",
    "make_divisible",
    "BlockSpec",
    "MicroNetConfig",
    "Sequential",
    "build_micronet",
    "count_params",
    "load_checkpoint",
    "save_checkpoint",
]
