"""STFT power spectrograms and their rendering to fixed-size RGB images."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from ._colormap import VIRIDIS
from .errors import InvalidConfig, InvalidTarget, SignalTooShort

__all__ = [
    "SpectrogramConfig",
    "SpectrogramMatrix",
    "RenderConfig",
    "RgbImage",
    "stft_spectrogram",
    "spectrogram_shape",
    "render_image",
    "resize_bilinear",
    "save_png",
    "epoch_to_image",
    "DB_FLOOR",
]

DB_FLOOR = 1e-12

WindowSpec = Union[str, tuple]


@dataclass(frozen=True)
class SpectrogramConfig:
    """STFT parameters. Defaults reproduce the Sleep-EDF preprocessing."""

    fs: float = 100.0
    nperseg: int = 30
    noverlap: int = 16
    nfft: int = 1024
    window: WindowSpec = ("tukey", 0.25)
    detrend: str = "constant"
    scaling: str = "density"
    sided: str = "onesided"

    def __post_init__(self):
        if not self.fs > 0:
            raise InvalidConfig(f"fs must be positive, got {self.fs}")
        if self.nperseg < 1:
            raise InvalidConfig(f"nperseg must be >= 1, got {self.nperseg}")
        if not 0 <= self.noverlap < self.nperseg:
            raise InvalidConfig(f"need 0 <= noverlap < nperseg, got {self.noverlap}/{self.nperseg}")
        if self.nfft < self.nperseg:
            raise InvalidConfig(f"nfft {self.nfft} < nperseg {self.nperseg}")
        if self.detrend not in ("constant", "none"):
            raise InvalidConfig(f"unsupported detrend {self.detrend!r}")
        if self.scaling != "density":
            raise InvalidConfig(f"unsupported scaling {self.scaling!r}")
        if self.sided != "onesided":
            raise InvalidConfig(f"unsupported sided {self.sided!r}")

    @property
    def hop(self) -> int:
        return self.nperseg - self.noverlap

    def taper(self) -> np.ndarray:
        return get_window(self.window, self.nperseg, fftbins=True).astype(np.float64)


@dataclass(frozen=True)
class SpectrogramMatrix:
    freqs: np.ndarray
    times: np.ndarray
    power: np.ndarray  # (n_freqs, n_times)

    @property
    def shape(self) -> tuple[int, int]:
        return self.power.shape


def spectrogram_shape(n_samples: int, cfg: SpectrogramConfig) -> tuple[int, int]:
    return cfg.nfft // 2 + 1, (n_samples - cfg.noverlap) // cfg.hop


def stft_spectrogram(samples, cfg: Optional[SpectrogramConfig] = None) -> SpectrogramMatrix:
    """One-sided power spectral density of overlapping windowed segments.

    Segments of ``nperseg`` samples start every ``nperseg - noverlap``
    samples. Each is mean-subtracted (``detrend="constant"``), tapered,
    zero-padded to ``nfft`` and transformed. Power is scaled by
    ``1 / (fs * sum(window**2))`` with interior bins doubled, giving units
    of signal**2 / Hz.

    Parameters
    ----------
    samples : array_like, shape (n,)
    cfg : SpectrogramConfig, optional

    Returns
    -------
    SpectrogramMatrix
        ``power`` has shape ``(nfft // 2 + 1, (n - noverlap) // hop)``.
    """
    cfg = SpectrogramConfig() if cfg is None else cfg
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    if x.size < cfg.nperseg:
        raise SignalTooShort(f"{x.size} samples < nperseg {cfg.nperseg}")

    n_freqs, n_seg = spectrogram_shape(x.size, cfg)
    segs = sliding_window_view(x, cfg.nperseg)[:: cfg.hop][:n_seg]
    if cfg.detrend == "constant":
        segs = segs - segs.mean(axis=1, keepdims=True)
    win = cfg.taper()
    spec = np.fft.rfft(segs * win, n=cfg.nfft, axis=1)
    power = (spec.real**2 + spec.imag**2) / (cfg.fs * np.sum(win**2))
    # fold negative frequencies; DC and (even nfft) Nyquist appear once
    if cfg.nfft % 2:
        power[:, 1:] *= 2
    else:
        power[:, 1:-1] *= 2

    freqs = np.arange(n_freqs) * cfg.fs / cfg.nfft
    times = (np.arange(n_seg) * cfg.hop + cfg.nperseg / 2) / cfg.fs
    return SpectrogramMatrix(freqs=freqs, times=times, power=np.ascontiguousarray(power.T))


@dataclass(frozen=True)
class RenderConfig:
    log_power: bool = True
    out_width: Optional[int] = 224
    out_height: Optional[int] = 224
    colormap: np.ndarray = field(default=VIRIDIS, repr=False, compare=False)

    def __post_init__(self):
        for name in ("out_width", "out_height"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise InvalidConfig(f"{name} must be positive, got {v}")


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit RGB image stored row-major as an (height, width, 3) array."""

    pixels: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) uint8 pixels, got {p.dtype} {p.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def tobytes(self) -> bytes:
        return np.ascontiguousarray(self.pixels).tobytes()

    @classmethod
    def frombuffer(cls, buf, width: int, height: int) -> "RgbImage":
        arr = np.frombuffer(buf, dtype=np.uint8)
        if arr.size != width * height * 3:
            raise ValueError(f"buffer of {arr.size} bytes is not {width}x{height}x3")
        return cls(arr.reshape(height, width, 3))

    def __eq__(self, other):
        if not isinstance(other, RgbImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)


def render_image(spec: SpectrogramMatrix, cfg: Optional[RenderConfig] = None) -> RgbImage:
    """Colormap a spectrogram into an RGB image, low frequencies at the bottom.

    Power is optionally converted to dB (``10 log10(p + 1e-12)``), min-max
    normalized per image, mapped through the 256-entry colormap and resized.
    A constant input cannot be normalized; it yields a uniform mid-colormap
    image with ``degenerate=True``.
    """
    cfg = RenderConfig() if cfg is None else cfg
    p = np.asarray(spec.power, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty spectrogram")
    if cfg.log_power:
        p = 10.0 * np.log10(p + DB_FLOOR)
    lo, hi = p.min(), p.max()
    cmap = np.asarray(cfg.colormap, dtype=np.uint8)
    if not hi > lo:
        mid = cmap[len(cmap) // 2]
        rgb = np.broadcast_to(mid, p.shape + (3,)).copy()
        degenerate = True
    else:
        norm = (p - lo) / (hi - lo)
        idx = np.rint(norm * (len(cmap) - 1)).astype(np.intp)
        rgb = cmap[idx]
        degenerate = False
    rgb = np.ascontiguousarray(rgb[::-1])
    w = cfg.out_width or rgb.shape[1]
    h = cfg.out_height or rgb.shape[0]
    img = RgbImage(rgb, degenerate=degenerate)
    if (h, w) != rgb.shape[:2]:
        img = RgbImage(resize_bilinear(img, w, h).pixels, degenerate=degenerate)
    return img


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped at the borders
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def resize_array(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of an (h, w, c) array; returns float64."""
    h_in, w_in = pixels.shape[:2]
    x = pixels.astype(np.float64)
    r0, r1, fy = _axis_weights(h_in, height)
    c0, c1, fx = _axis_weights(w_in, width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = x[r0][:, c0] * (1 - fx) + x[r0][:, c1] * fx
    bottom = x[r1][:, c0] * (1 - fx) + x[r1][:, c1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(img: RgbImage, width: int, height: int) -> RgbImage:
    """Resize with bilinear interpolation, channels independent.

    Uses the half-pixel-centre convention (as OpenCV's ``INTER_LINEAR``);
    results are rounded to nearest and clipped to [0, 255].
    """
    if width <= 0 or height <= 0:
        raise InvalidTarget(f"target size must be positive, got {width}x{height}")
    if img.width <= 0 or img.height <= 0:
        raise InvalidTarget("source image is empty")
    if (img.width, img.height) == (width, height):
        return RgbImage(img.pixels.copy(), degenerate=img.degenerate)
    out = resize_array(img.pixels, width, height)
    return RgbImage(np.clip(np.rint(out), 0, 255).astype(np.uint8), degenerate=img.degenerate)


def epoch_to_image(
    samples, spectro_cfg: Optional[SpectrogramConfig] = None, render_cfg: Optional[RenderConfig] = None
) -> RgbImage:
    return render_image(stft_spectrogram(samples, spectro_cfg), render_cfg)


def save_png(img: RgbImage, path) -> None:
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(img.pixels)).save(path, format="PNG")
