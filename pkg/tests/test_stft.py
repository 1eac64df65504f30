"""STFT bin arithmetic and overlap-add reconstruction."""

import numpy as np
import pytest

from wavesep.audio import AudioTrack
from wavesep.errors import DataError
from wavesep.stft import istft, stft

SR = 8000


def _sine(freq, n=SR, sr=SR, amp=0.8):
    t = np.arange(n) / sr
    return AudioTrack(amp * np.sin(2 * np.pi * freq * t), sr)


def test_sine_peak_bin():
    spec = stft(_sine(440.0), window=512)
    mean_mag = spec.magnitude.mean(axis=1)
    assert int(np.argmax(mean_mag)) == round(440 * 512 / 8000)  # bin 28


def test_zero_signal_zero_magnitude():
    spec = stft(AudioTrack(np.zeros(4096), SR), window=512)
    np.testing.assert_array_equal(spec.magnitude, 0.0)


def test_shapes_match_frame_arithmetic():
    n = 5000
    spec = stft(AudioTrack(np.zeros(n), SR), window=256)
    frames = (n - 256) // 128 + 1
    assert spec.magnitude.shape == (129, frames)


def test_roundtrip_interior_exact():
    rng = np.random.default_rng(0)
    x = np.clip(rng.normal(scale=0.25, size=4096), -1, 1)
    spec = stft(AudioTrack(x, SR), window=512)
    back = istft(spec).samples
    # interior: skip the first and last window where coverage is partial
    lo, hi = 512, back.shape[0] - 512
    err = np.abs(back[lo:hi] - x[lo:hi]).max()
    assert err <= 1e-6


def test_roundtrip_relative_error_small():
    rng = np.random.default_rng(1)
    x = np.clip(rng.normal(scale=0.25, size=8192), -1, 1)
    spec = stft(AudioTrack(x, SR), window=256)
    back = istft(spec, length=x.shape[0]).samples
    lo = 256
    hi = ((x.shape[0] - 256) // 128) * 128 + 256  # last covered sample
    rel = np.linalg.norm(back[lo:hi] - x[lo:hi]) / np.linalg.norm(x[lo:hi])
    assert rel <= 1e-9


def test_istft_length_padding_and_trim():
    x = np.zeros(1000)
    x[500] = 0.5
    spec = stft(AudioTrack(x, SR), window=256)
    assert istft(spec, length=1000).samples.shape == (1000,)
    assert istft(spec, length=3000).samples.shape == (3000,)


def test_non_cola_parameters_rejected():
    track = _sine(440.0)
    with pytest.raises(DataError):
        stft(track, window=500)  # not a power of two
    with pytest.raises(DataError):
        stft(track, window=512, hop=100)  # hop != window/2
    with pytest.raises(DataError):
        stft(AudioTrack(np.zeros(100), SR), window=256)  # too short
