"""
Two-phase training on a separable fixture
=========================================

Trains the whole network for a few epochs, then only the layers from
index 5 on, and confirms the frozen layers did not move.
"""

from eegmobile.fixtures import separable_images
from eegmobile.nn.model import MicroNetConfig, build_micronet, count_params
from eegmobile.train import ArraySource, TrainConfig, fit

# 32x32 inputs keep the run to a few seconds on one core
x, y = separable_images(n_classes=5, per_class=32, size=32, seed=0)
model = build_micronet(MicroNetConfig(input_shape=(32, 32, 3)), seed=0)

cfg = TrainConfig(batch_size=16, epochs=6, phase1_epochs=2, trainable_layers="5:", strict=True)
hist = fit(model, ArraySource(x, y), cfg)

for epoch, (loss, acc) in enumerate(zip(hist.loss, hist.train_accuracy), 1):
    phase = 1 if epoch <= cfg.phase1_epochs else 2
    print(f"epoch {epoch} (phase {phase}): loss {loss:.4f}  train accuracy {acc:.3f}")

print("trainable parameters in phase 2:", count_params(model, trainable_only=True), "of", count_params(model))
print("frozen layers unchanged:", hist.frozen_digest_phase1 == hist.frozen_digest_final)
