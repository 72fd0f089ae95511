import numpy as np
import pytest
from hypothesis import given, strategies as st

from eegmobile._colormap import VIRIDIS
from eegmobile.errors import InvalidConfig, InvalidTarget, SignalTooShort
from eegmobile.spectro import (
    RenderConfig,
    RgbImage,
    SpectrogramConfig,
    SpectrogramMatrix,
    epoch_to_image,
    render_image,
    resize_array,
    resize_bilinear,
    save_png,
    spectrogram_shape,
    stft_spectrogram,
)

from oracles import dft_psd, max_relative_error

FS = 100.0


def _sine(freq, n=3000, fs=FS, amp=1.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / fs)


# -- STFT ---------------------------------------------------------------------


def test_default_shape_3000_samples():
    m = stft_spectrogram(np.random.default_rng(0).normal(size=3000))
    assert m.power.shape == (513, 213)
    assert spectrogram_shape(3000, SpectrogramConfig()) == (513, 213)


def test_zero_input_gives_zero_power():
    m = stft_spectrogram(np.zeros(3000))
    assert not m.power.any()


def test_sine_peak_at_10hz():
    m = stft_spectrogram(_sine(10.0))
    k = int(np.argmax(m.power.mean(axis=1)))
    assert k in (102, 103)
    assert m.freqs[1] == pytest.approx(100 / 1024)


def test_matches_dft_oracle(rng):
    x = rng.normal(size=3000) * 20
    _, times, power = dft_psd(x)
    m = stft_spectrogram(x)
    assert max_relative_error(m.power, power) < 1e-9
    assert np.array_equal(m.times, times)


def test_detrend_none_and_other_configs_match_oracle(rng):
    x = rng.normal(size=700) + 3.0
    cfg = SpectrogramConfig(fs=50, nperseg=40, noverlap=10, nfft=101, detrend="none", window=("tukey", 0.5))
    _, _, power = dft_psd(x, fs=50, nperseg=40, noverlap=10, nfft=101, alpha=0.5, detrend=False)
    assert max_relative_error(stft_spectrogram(x, cfg).power, power) < 1e-9


def test_matches_scipy_reference(rng):
    from scipy.signal import spectrogram

    x = rng.normal(size=3000)
    f, t, s = spectrogram(x, fs=100, nperseg=30, noverlap=16, nfft=1024)
    m = stft_spectrogram(x)
    assert np.allclose(m.freqs, f)
    assert np.allclose(m.times, t)
    assert max_relative_error(m.power, s) < 1e-9


def test_parseval_sine_mass_close_to_variance():
    x = _sine(10.0, amp=3.0)
    m = stft_spectrogram(x)
    df = m.freqs[1] - m.freqs[0]
    mass = m.power.sum(axis=0).mean() * df
    assert mass == pytest.approx(np.var(x), rel=0.05)


@pytest.mark.parametrize(
    "kwargs",
    [dict(noverlap=30), dict(noverlap=40), dict(nfft=16), dict(fs=0), dict(fs=-1), dict(detrend="linear")],
)
def test_invalid_config(kwargs):
    with pytest.raises(InvalidConfig):
        SpectrogramConfig(**kwargs)


def test_signal_too_short():
    with pytest.raises(SignalTooShort):
        stft_spectrogram(np.zeros(29))


@st.composite
def configs(draw):
    nperseg = draw(st.integers(2, 64))
    noverlap = draw(st.integers(0, nperseg - 1))
    nfft = draw(st.integers(nperseg, 256))
    n = draw(st.integers(nperseg, 1500))
    return n, SpectrogramConfig(fs=draw(st.sampled_from([1.0, 100.0, 256.0])), nperseg=nperseg,
                                noverlap=noverlap, nfft=nfft)


@given(configs())
def test_shape_law_and_invariants(case):
    n, cfg = case
    m = stft_spectrogram(np.random.default_rng(n).normal(size=n), cfg)
    expected = (cfg.nfft // 2 + 1, (n - cfg.noverlap) // (cfg.nperseg - cfg.noverlap))
    assert m.power.shape == expected
    assert np.all(m.power >= 0)
    assert np.array_equal(m.freqs, np.arange(expected[0]) * cfg.fs / cfg.nfft)
    assert np.all(np.diff(m.times) > 0)


# -- rendering ----------------------------------------------------------------


def _matrix(power):
    power = np.asarray(power, dtype=float)
    return SpectrogramMatrix(np.arange(power.shape[0]), np.arange(power.shape[1]), power)


def test_colormap_endpoints():
    assert tuple(VIRIDIS[0]) == (68, 1, 84)
    assert tuple(VIRIDIS[-1]) == (253, 231, 37)
    assert VIRIDIS.shape == (256, 3)


def test_two_by_two_corners_hit_colormap_endpoints():
    img = render_image(_matrix([[0, 1], [1, 0]]), RenderConfig(log_power=False, out_width=None, out_height=None))
    assert img.pixels.shape == (2, 2, 3)
    # row 0 of the matrix (lowest frequency) is drawn at the bottom
    assert tuple(img.pixels[1, 0]) == tuple(VIRIDIS[0])
    assert tuple(img.pixels[1, 1]) == tuple(VIRIDIS[-1])
    assert tuple(img.pixels[0, 0]) == tuple(VIRIDIS[-1])
    assert tuple(img.pixels[0, 1]) == tuple(VIRIDIS[0])


def test_constant_power_is_degenerate_uniform():
    img = render_image(_matrix(np.full((5, 7), 3.0)))
    assert img.degenerate
    assert np.all(img.pixels == img.pixels[0, 0])


def test_default_render_is_224_square():
    img = epoch_to_image(np.random.default_rng(1).normal(size=3000))
    assert (img.width, img.height) == (224, 224)
    assert len(img.tobytes()) == 224 * 224 * 3
    assert not img.degenerate


def test_low_frequencies_at_bottom():
    img = epoch_to_image(_sine(5.0), render_cfg=RenderConfig(out_width=None, out_height=None))
    brightness = img.pixels.astype(float).sum(axis=2).mean(axis=1)
    row = int(np.argmax(brightness))
    # 5 Hz is bin ~51 of 513, i.e. near the bottom of the flipped image
    assert abs((512 - row) - 51) <= 2


@given(st.integers(-20, 20), st.integers(0, 10_000))
def test_render_invariant_to_power_scale_without_log(exp, seed):
    power = np.random.default_rng(seed).exponential(size=(17, 9))
    cfg = RenderConfig(log_power=False, out_width=None, out_height=None)
    assert render_image(_matrix(power), cfg) == render_image(_matrix(power * 2.0**exp), cfg)


def test_render_deterministic(rng):
    x = rng.normal(size=3000)
    assert epoch_to_image(x).tobytes() == epoch_to_image(x.copy()).tobytes()


# -- resize -------------------------------------------------------------------


def test_resize_identity_is_byte_identical(rng):
    img = RgbImage(rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8))
    assert resize_bilinear(img, 7, 5).tobytes() == img.tobytes()


def test_resize_two_pixels_to_four():
    img = RgbImage(np.array([[[0, 0, 0], [255, 255, 255]]], dtype=np.uint8))
    out = resize_bilinear(img, 4, 1).pixels[0, :, 0].astype(int)
    # half-pixel centres map to source x = -0.25, 0.25, 0.75, 1.25 -> clamp, 1/4, 3/4, clamp
    assert list(out) == [0, 64, 191, 255]
    assert np.all(np.diff(out) >= 0)


@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 255))
def test_resize_uniform_stays_uniform(w, h, v):
    img = RgbImage(np.full((3, 5, 3), v, dtype=np.uint8))
    assert np.all(resize_bilinear(img, w, h).pixels == v)


def test_resize_matches_opencv_on_float_input(rng):
    cv2 = pytest.importorskip("cv2")
    src = rng.uniform(0, 255, size=(13, 9, 3)).astype(np.float32)
    for w, h in [(224, 224), (4, 5), (9, 26), (3, 3)]:
        ref = cv2.resize(src, (w, h), interpolation=cv2.INTER_LINEAR)
        assert np.allclose(resize_array(src, w, h), ref, atol=1e-3)


def test_resize_rejects_zero_target():
    img = RgbImage(np.zeros((2, 2, 3), np.uint8))
    with pytest.raises(InvalidTarget):
        resize_bilinear(img, 0, 3)


def test_png_round_trip(tmp_path, rng):
    from PIL import Image

    img = epoch_to_image(rng.normal(size=3000))
    path = tmp_path / "x.png"
    save_png(img, path)
    with Image.open(path) as im:
        assert np.array_equal(np.asarray(im.convert("RGB")), img.pixels)
