"""Hann-window STFT with exact overlap-add inversion at half-window hop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioTrack
from .errors import DataError


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _hann_periodic(window: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(window) / window)


@dataclass
class Spectrogram:
    magnitude: np.ndarray  # [F, T], nonnegative
    phase: np.ndarray  # [F, T], radians, kept for reconstruction
    window: int
    hop: int
    sample_rate: int

    def __post_init__(self):
        if self.magnitude.shape != self.phase.shape:
            raise DataError("magnitude and phase must have matching shapes")
        if np.any(self.magnitude < 0):
            raise DataError("magnitudes must be nonnegative")

    @property
    def complex_frames(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)


def _check_params(window: int, hop: int):
    if not _is_power_of_two(window):
        raise DataError(f"window must be a power of two, got {window}")
    if hop != window // 2:
        raise DataError(
            f"hop must be window/2 for exact overlap-add, got hop={hop} window={window}"
        )


def stft(track: AudioTrack, window: int = 512, hop: int | None = None) -> Spectrogram:
    """Magnitude/phase STFT with a periodic Hann window.

    The half-overlapping periodic Hann windows sum to a constant, so
    the paired istft reconstructs interior samples exactly.
    """
    if hop is None:
        hop = window // 2
    _check_params(window, hop)
    x = track.samples
    if x.shape[0] < window:
        raise DataError(f"signal of {x.shape[0]} samples is shorter than one window")
    taper = _hann_periodic(window)
    n_frames = (x.shape[0] - window) // hop + 1
    frames = np.stack([
        x[i * hop:i * hop + window] * taper for i in range(n_frames)
    ])
    spec = np.fft.rfft(frames, axis=1).T  # [F, T]
    return Spectrogram(
        magnitude=np.abs(spec),
        phase=np.angle(spec),
        window=window,
        hop=hop,
        sample_rate=track.sample_rate,
    )


def istft(spec: Spectrogram, length: int | None = None) -> AudioTrack:
    """Overlap-add inverse using the analysis window for normalization."""
    _check_params(spec.window, spec.hop)
    frames = np.fft.irfft(spec.complex_frames.T, n=spec.window, axis=1)
    n_frames = frames.shape[0]
    total = (n_frames - 1) * spec.hop + spec.window
    taper = _hann_periodic(spec.window)
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n_frames):
        lo = i * spec.hop
        out[lo:lo + spec.window] += frames[i]
        norm[lo:lo + spec.window] += taper
    nonzero = norm > 1e-12
    out[nonzero] /= norm[nonzero]
    if length is not None:
        if length > total:
            out = np.pad(out, (0, length - total))
        else:
            out = out[:length]
    return AudioTrack(np.clip(out, -1.0, 1.0), spec.sample_rate)
