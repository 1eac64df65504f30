"""Mono audio buffers and WAV (RIFF) file I/O.

Supported on read: PCM 16-bit and IEEE float 32/64-bit, any channel
count (multi-channel is downmixed by averaging). Written files are mono,
either float32 or PCM 16-bit, always little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import WavFormatError

# floor for dBFS readings so exact silence stays finite in reports
DBFS_FLOOR = -300.0


@dataclass
class AudioTrack:
    """Mono sample buffer in [-1, 1] plus its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"AudioTrack samples must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("AudioTrack samples contain NaN or Inf")
        if arr.size and float(np.max(np.abs(arr))) > 1.0:
            raise ValueError("AudioTrack samples exceed full scale 1.0")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        self.samples = arr

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(x * x)))


def rms_dbfs(x: np.ndarray) -> float:
    """RMS level in dB relative to full scale 1.0, floored at DBFS_FLOOR."""
    level = rms(x)
    if level <= 10.0 ** (DBFS_FLOOR / 20.0):
        return DBFS_FLOOR
    return max(20.0 * np.log10(level), DBFS_FLOOR)


_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


def read_wav(path) -> AudioTrack:
    """Parse a RIFF/WAVE file into a mono AudioTrack."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise WavFormatError(f"{path}: file too short for a RIFF header")
    if raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: fmt chunk truncated")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise WavFormatError(
                    f"{path}: data chunk truncated ({len(body)} of {size} bytes)"
                )
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise WavFormatError(f"{path}: missing data chunk")

    audio_format, channels, sample_rate, _, _, bits = fmt
    if channels < 1:
        raise WavFormatError(f"{path}: invalid channel count {channels}")

    if audio_format == _FMT_PCM and bits == 16:
        frames = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        frames = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif audio_format == _FMT_IEEE_FLOAT and bits == 64:
        frames = np.frombuffer(data, dtype="<f8").copy()
    else:
        raise WavFormatError(
            f"{path}: unsupported codec (format {audio_format}, {bits}-bit)"
        )

    if frames.size % channels != 0:
        raise WavFormatError(f"{path}: data size not a whole number of frames")
    if channels > 1:
        frames = frames.reshape(-1, channels).mean(axis=1)
    # quantization can leave PCM reads a hair over full scale
    np.clip(frames, -1.0, 1.0, out=frames)
    return AudioTrack(frames, sample_rate)


def write_wav(track: AudioTrack, path, encoding: str = "float32") -> None:
    """Write a mono WAV file; ``encoding`` is 'float32', 'float64' or 'pcm16'."""
    samples = track.samples
    if encoding == "float32":
        payload = samples.astype("<f4").tobytes()
        audio_format, bits = _FMT_IEEE_FLOAT, 32
    elif encoding == "float64":
        payload = samples.astype("<f8").tobytes()
        audio_format, bits = _FMT_IEEE_FLOAT, 64
    elif encoding == "pcm16":
        q = np.clip(np.round(samples * 32768.0), -32768, 32767)
        payload = q.astype("<i2").tobytes()
        audio_format, bits = _FMT_PCM, 16
    else:
        raise ValueError(f"unknown wav encoding {encoding!r}")

    block_align = bits // 8
    byte_rate = track.sample_rate * block_align
    fmt_chunk = struct.pack(
        "<HHIIHH", audio_format, 1, track.sample_rate, byte_rate, block_align, bits
    )
    chunks = [b"fmt ", struct.pack("<I", len(fmt_chunk)), fmt_chunk]
    if audio_format == _FMT_IEEE_FLOAT:
        # fact chunk is expected for non-PCM formats
        chunks += [b"fact", struct.pack("<I", 4), struct.pack("<I", samples.size)]
    chunks += [b"data", struct.pack("<I", len(payload)), payload]
    if len(payload) & 1:
        chunks.append(b"\x00")
    body = b"".join(chunks)
    header = b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE"
    Path(path).write_bytes(header + body)
