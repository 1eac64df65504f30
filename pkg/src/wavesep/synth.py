"""Parametric instrument synthesis and ensemble piece generation.

Instruments are additive-synthesis recipes (harmonic amplitudes, an
attack/decay envelope, a pitch range, optional vibrato). Pieces mix
2..K instruments from a fixed vocabulary; absent slots are exact
silence and every slot shares one common gain so the mix equals the
sample-wise sum of the sources.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .audio import AudioTrack, rms_dbfs
from .errors import DataError

# slots whose RMS sits below this level count as silent
SILENCE_EPS_DBFS = -60.0
MIX_PEAK = 0.9


@dataclass(frozen=True)
class InstrumentSpec:
    """Additive-synthesis recipe for one instrument."""

    name: str
    partials: tuple[float, ...]  # amplitude of harmonic h at index h-1
    attack_s: float = 0.015
    decay_s: float = 0.08
    pitch_range: tuple[int, int] = (48, 72)  # MIDI, inclusive
    vibrato_depth: float = 0.0  # semitones, 0 disables
    vibrato_rate: float = 5.0  # Hz

    def __post_init__(self):
        if not self.partials or all(a == 0 for a in self.partials):
            raise ValueError(f"{self.name}: needs at least one nonzero partial")
        if any(a < 0 for a in self.partials):
            raise ValueError(f"{self.name}: partial amplitudes must be nonnegative")
        lo, hi = self.pitch_range
        if lo > hi:
            raise ValueError(f"{self.name}: empty pitch range")
        if self.attack_s < 0 or self.decay_s < 0:
            raise ValueError(f"{self.name}: envelope times must be nonnegative")


def midi_to_hz(midi: float) -> float:
    return 440.0 * 2.0 ** ((midi - 69) / 12.0)


def synth_note(
    spec: InstrumentSpec,
    midi_pitch: int,
    duration_s: float,
    sample_rate: int,
) -> AudioTrack:
    """Render one note: sum of harmonic sines shaped by the envelope.

    Partial amplitudes are normalized by their sum so the note peaks at
    most at 1.0 before any mixing gain.
    """
    lo, hi = spec.pitch_range
    if not (lo <= midi_pitch <= hi):
        raise DataError(
            f"pitch {midi_pitch} outside {spec.name} range [{lo}, {hi}]"
        )
    n = int(round(duration_s * sample_rate))
    t = np.arange(n, dtype=np.float64) / sample_rate
    f0 = midi_to_hz(midi_pitch)

    if spec.vibrato_depth > 0:
        # phase-modulated fundamental; harmonics track it
        ratio = 2.0 ** (spec.vibrato_depth * np.sin(2 * np.pi * spec.vibrato_rate * t) / 12.0)
        phase = 2 * np.pi * np.cumsum(f0 * ratio) / sample_rate
    else:
        phase = 2 * np.pi * f0 * t

    norm = sum(spec.partials)
    wave = np.zeros(n)
    nyquist = sample_rate / 2.0
    for h, amp in enumerate(spec.partials, start=1):
        if amp == 0 or h * f0 >= nyquist:
            continue
        wave += (amp / norm) * np.sin(h * phase)

    env = np.ones(n)
    attack = min(int(round(spec.attack_s * sample_rate)), n)
    if attack > 0:
        env[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
    decay = min(int(round(spec.decay_s * sample_rate)), n)
    if decay > 0:
        env[n - decay:] = np.minimum(env[n - decay:], np.linspace(1.0, 0.0, decay))
    return AudioTrack(wave * env, sample_rate)


# Built-in vocabulary. The quartet has well-separated registers and
# harmonic profiles so small models can actually learn to split them;
# the full set covers a standard ensemble lineup.
_QUARTET_SPECS = [
    InstrumentSpec("bass", (1.0, 0.55, 0.3), pitch_range=(36, 48), attack_s=0.02),
    InstrumentSpec("brass", (1.0, 0.75, 0.55, 0.4, 0.3, 0.22), pitch_range=(50, 62)),
    InstrumentSpec("reed", (1.0, 0.0, 0.65, 0.0, 0.35, 0.0, 0.18), pitch_range=(62, 74)),
    InstrumentSpec("flute", (1.0, 0.18), pitch_range=(74, 86), vibrato_depth=0.25),
]

_ORCHESTRA_SPECS = [
    InstrumentSpec("bassoon", (1.0, 0.8, 0.55, 0.3, 0.15), pitch_range=(34, 52)),
    InstrumentSpec("cello", (1.0, 0.7, 0.5, 0.38, 0.28, 0.2), pitch_range=(36, 60), vibrato_depth=0.2),
    InstrumentSpec("clarinet", (1.0, 0.0, 0.75, 0.0, 0.5, 0.0, 0.2), pitch_range=(50, 79)),
    InstrumentSpec("double_bass", (1.0, 0.5, 0.25), pitch_range=(28, 43)),
    InstrumentSpec("flute", (1.0, 0.18), pitch_range=(72, 96), vibrato_depth=0.25),
    InstrumentSpec("horn", (1.0, 0.6, 0.35, 0.18), pitch_range=(41, 65)),
    InstrumentSpec("oboe", (0.55, 1.0, 0.8, 0.45, 0.25), pitch_range=(58, 86), vibrato_depth=0.15),
    InstrumentSpec("saxophone", (1.0, 0.85, 0.5, 0.35, 0.28, 0.18), pitch_range=(49, 75), vibrato_depth=0.3),
    InstrumentSpec("trombone", (1.0, 0.75, 0.5, 0.32, 0.2), pitch_range=(40, 60)),
    InstrumentSpec("trumpet", (0.8, 1.0, 0.7, 0.5, 0.32, 0.2), pitch_range=(55, 79)),
    InstrumentSpec("tuba", (1.0, 0.6, 0.3, 0.12), pitch_range=(26, 44)),
    InstrumentSpec("viola", (0.9, 1.0, 0.65, 0.45, 0.3), pitch_range=(48, 76), vibrato_depth=0.2),
    InstrumentSpec("violin", (1.0, 0.9, 0.68, 0.5, 0.35, 0.22), pitch_range=(55, 91), vibrato_depth=0.25),
]

INSTRUMENTS: dict[str, InstrumentSpec] = {
    s.name: s for s in _QUARTET_SPECS + _ORCHESTRA_SPECS
}

QUARTET_VOCABULARY = tuple(sorted(s.name for s in _QUARTET_SPECS))
ORCHESTRA_VOCABULARY = tuple(sorted(s.name for s in _ORCHESTRA_SPECS))


def canonical_vocabulary(names: Iterable[str]) -> tuple[str, ...]:
    """Fixed global instrument ordering: lexicographic, duplicates rejected."""
    names = list(names)
    if len(set(names)) != len(names):
        raise DataError("vocabulary contains duplicate instrument names")
    for name in names:
        if name not in INSTRUMENTS:
            raise DataError(f"unknown instrument name {name!r}")
    return tuple(sorted(names))


@dataclass
class EnsembleExample:
    """One mixture: a mix track, K slot-aligned sources, and labels."""

    mix: AudioTrack
    sources: list[AudioTrack]
    labels: np.ndarray  # K binary entries
    piece_id: str
    instruments: tuple[str, ...]  # slot names, canonical order
    n_active: int = field(init=False)

    def __post_init__(self):
        k = len(self.instruments)
        if len(self.sources) != k or self.labels.shape != (k,):
            raise DataError("sources/labels do not match the vocabulary size")
        self.n_active = int(self.labels.sum())


def _render_track(
    spec: InstrumentSpec, duration_s: float, sample_rate: int, rng: np.random.Generator
) -> np.ndarray:
    """One instrument line: sequential random notes with occasional rests."""
    n = int(round(duration_s * sample_rate))
    buf = np.zeros(n)
    lo, hi = spec.pitch_range
    t = 0.0
    first = True
    while t < duration_s - 0.1:
        if not first and rng.random() < 0.15:
            t += float(rng.choice([0.2, 0.3, 0.4]))
            continue
        first = False
        note_dur = float(rng.choice([0.35, 0.5, 0.7, 0.9]))
        pitch = int(rng.integers(lo, hi + 1))
        amp = float(rng.uniform(0.5, 0.95))
        dur_eff = min(note_dur, duration_s - t)
        note = synth_note(spec, pitch, dur_eff, sample_rate)
        start = int(round(t * sample_rate))
        seg = note.samples[: n - start]
        buf[start:start + seg.size] += amp * seg
        t += note_dur
    return buf


def generate_piece(
    instruments: Sequence[str],
    duration_s: float,
    seed: int,
    sample_rate: int = 8000,
    vocabulary: Sequence[str] | None = None,
    piece_id: str = "piece",
) -> EnsembleExample:
    """Render a random ensemble piece with the given active instruments.

    Deterministic in (instruments, duration, seed): each slot draws from
    its own seeded stream, so a slot's audio depends only on the seed and
    its slot index.
    """
    if not instruments:
        raise DataError("empty instrument set")
    if len(instruments) < 2:
        raise DataError("a piece needs at least two active instruments")
    vocab = canonical_vocabulary(vocabulary if vocabulary is not None else instruments)
    active = set(instruments)
    if not active.issubset(vocab):
        missing = sorted(active.difference(vocab))
        raise DataError(f"instruments not in vocabulary: {missing}")

    n = int(round(duration_s * sample_rate))
    raw = np.zeros((len(vocab), n))
    for slot, name in enumerate(vocab):
        if name in active:
            rng = np.random.default_rng([seed, slot])
            raw[slot] = _render_track(INSTRUMENTS[name], duration_s, sample_rate, rng)

    peak = float(np.max(np.abs(raw.sum(axis=0)))) if n else 0.0
    # margin keeps the re-summed scaled sources under the ceiling after rounding
    gain = min(1.0, MIX_PEAK * (1.0 - 1e-12) / peak) if peak > 0 else 1.0
    scaled = gain * raw
    mix = scaled.sum(axis=0)

    labels = np.array(
        [1 if rms_dbfs(scaled[i]) > SILENCE_EPS_DBFS else 0 for i in range(len(vocab))],
        dtype=np.int64,
    )
    return EnsembleExample(
        mix=AudioTrack(mix, sample_rate),
        sources=[AudioTrack(scaled[i], sample_rate) for i in range(len(vocab))],
        labels=labels,
        piece_id=piece_id,
        instruments=vocab,
    )
