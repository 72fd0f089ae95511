"""Sleep-stage classification from single-channel EEG spectrograms.

Subpackages and modules:

- :mod:`eegmobile.edf` - EDF/EDF+ reader, hypnogram annotations, stage remapping
- :mod:`eegmobile.spectro` - STFT spectrograms and image rendering
- :mod:`eegmobile.dataset` / :mod:`eegmobile.cache` - epoching, folds, ingestion, image cache
- :mod:`eegmobile.nn` - NumPy MobileNetV3-style layers and the micro network
- :mod:`eegmobile.train` - loss, Adam, freezing, cross-validated training
- :mod:`eegmobile.metrics` - confusion matrix, accuracy, F1, kappa
"""

__version__ = "0.1.0"

from .edf import Stage, read_channel, parse_annotations, remap_stage  # noqa: E402
from .spectro import SpectrogramConfig, RenderConfig, stft_spectrogram, render_image  # noqa: E402

__all__ = [
    "Stage",
    "read_channel",
    "parse_annotations",
    "remap_stage",
    "SpectrogramConfig",
    "RenderConfig",
    "stft_spectrogram",
    "render_image",
]
