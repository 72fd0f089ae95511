"""
From a 30 s epoch to a spectrogram image
========================================

A 12 Hz sine buried in noise is turned into a one-sided power spectral
density over time, rendered through the viridis colormap and resized to
224x224.
"""

import tempfile
from pathlib import Path

import numpy as np

from eegmobile.spectro import RenderConfig, SpectrogramConfig, render_image, save_png, stft_spectrogram

fs = 100.0
t = np.arange(3000) / fs
rng = np.random.default_rng(0)
x = 40 * np.sin(2 * np.pi * 12.0 * t) + rng.normal(0, 10, t.size)

# 30-sample segments overlapping by 16, zero-padded to 1024 bins
cfg = SpectrogramConfig(fs=fs, nperseg=30, noverlap=16, nfft=1024)
m = stft_spectrogram(x, cfg)
print("power matrix (freqs x times):", m.shape)
print(f"frequency step {m.freqs[1]:.4f} Hz, time step {m.times[1] - m.times[0]:.2f} s")

peak = m.freqs[np.argmax(m.power.mean(axis=1))]
print(f"strongest frequency {peak:.2f} Hz")

# a short segment spreads the peak over several Hz, whatever the FFT size
for nfft in (64, 256, 1024):
    mm = stft_spectrogram(x, SpectrogramConfig(fs=fs, nperseg=30, noverlap=16, nfft=nfft))
    spec = mm.power.mean(axis=1)
    above = mm.freqs[spec > spec.max() / 2]
    print(f"nfft={nfft:5d}: {mm.shape[0]:4d} bins, half-power band {above.min():.1f}-{above.max():.1f} Hz")

img = render_image(m, RenderConfig())
print("image:", img.width, "x", img.height, "degenerate:", img.degenerate)

# the low frequencies sit at the bottom of the image
row = np.argmax(img.pixels.astype(float).sum(axis=(1, 2)))
print(f"brightest row {row} of {img.height} (~{(img.height - 0.5 - row) / img.height * fs / 2:.1f} Hz)")

out = Path(tempfile.mkdtemp()) / "epoch.png"
save_png(img, out)
print("wrote", out)
