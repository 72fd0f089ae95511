"""
The micro-scale mobile network
==============================

Lists the layers of the default network, checks one inverted-residual
block against central finite differences and shows how freezing changes
the trainable parameter count.
"""

import numpy as np

from eegmobile.nn.layers import InvertedResidual
from eegmobile.nn.model import build_micronet, count_params
from eegmobile.train import set_trainable

model = build_micronet(seed=0)
print(model.summary())

x = np.random.default_rng(1).uniform(size=(2, 64, 64, 3)).astype(np.float32)
print("class probabilities:\n", np.round(model.forward(x), 3))

# freezing the stem and first block leaves the deeper blocks and the head
set_trainable(model, "5:")
print(f"trainable after freezing layers 0-4: {count_params(model, True)} of {count_params(model)}")

# finite-difference check of a block with squeeze-excite and h-swish, in float64
rng = np.random.default_rng(2)
block = InvertedResidual(4, 4, expansion=3, stride=1, activation="h_swish", use_se=True, rng=rng, dtype=np.float64)
xb = rng.normal(size=(2, 5, 5, 4))
r = rng.normal(size=block.forward(xb, True).shape)
block.forward(xb, True)
dx = block.backward(r)

h = 1e-5
num = np.zeros_like(xb)
for i in np.ndindex(xb.shape):
    old = xb[i]
    xb[i] = old + h
    up = np.sum(block.forward(xb, True) * r)
    xb[i] = old - h
    down = np.sum(block.forward(xb, True) * r)
    xb[i] = old
    num[i] = (up - down) / (2 * h)
print(f"input-gradient relative error: {np.linalg.norm(dx - num) / np.linalg.norm(num):.2e}")
