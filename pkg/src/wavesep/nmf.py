"""Timbre-informed NMF baseline.

Spectral templates are learned per instrument from isolated synthetic
notes with KL-divergence NMF. Separation stacks the active templates,
fits activations on the mixture spectrogram with the templates held
fixed, and resynthesizes each source through a Wiener mask on the
complex mixture STFT.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .audio import AudioTrack
from .checkpoint import load_arrays, save_arrays
from .errors import DataError, ModelError
from .stft import Spectrogram, istft, stft

EPS = 1e-12
DEFAULT_TEMPLATES = 8
DEFAULT_ITERATIONS = 100
DEFAULT_WINDOW = 512


def kl_divergence(v: np.ndarray, wh: np.ndarray) -> float:
    """Generalized KL divergence D(V || WH) with epsilon guards."""
    return float(np.sum(v * np.log((v + EPS) / (wh + EPS)) - v + wh))


def _update_h(v: np.ndarray, w: np.ndarray, h: np.ndarray) -> np.ndarray:
    ratio = v / (w @ h + EPS)
    return h * (w.T @ ratio) / (w.T.sum(axis=1, keepdims=True) + EPS)


def _update_w(v: np.ndarray, w: np.ndarray, h: np.ndarray) -> np.ndarray:
    ratio = v / (w @ h + EPS)
    return w * (ratio @ h.T) / (h.sum(axis=1)[None, :] + EPS)


@dataclass
class TemplateBank:
    """Per-instrument nonnegative basis spectra, columns L1-normalized."""

    templates: dict[str, np.ndarray]  # name -> [F, R]
    window: int
    sample_rate: int

    def __post_init__(self):
        for name, w in self.templates.items():
            if w.ndim != 2 or np.any(w < 0):
                raise DataError(f"{name}: templates must be a nonnegative [F, R] matrix")
            sums = w.sum(axis=0)
            if np.any(np.abs(sums - 1.0) > 1e-6):
                raise DataError(f"{name}: template columns must be L1-normalized")

    @property
    def num_bins(self) -> int:
        return next(iter(self.templates.values())).shape[0]

    def save(self, path) -> None:
        arrays = {f"templates.{k}": v for k, v in self.templates.items()}
        save_arrays(path, arrays, meta={
            "kind": "nmf-templates",
            "window": self.window,
            "sample_rate": self.sample_rate,
        })

    @classmethod
    def load(cls, path) -> "TemplateBank":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "nmf-templates":
            raise ModelError(f"{path}: not a template bank (kind={meta.get('kind')!r})")
        prefix = "templates."
        templates = {
            k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)
        }
        if not templates:
            raise ModelError(f"{path}: template bank holds no templates")
        return cls(templates, int(meta["window"]), int(meta["sample_rate"]))


def _normalize_columns(w: np.ndarray, h: np.ndarray | None = None):
    """L1-normalize template columns; rescales H to keep WH unchanged."""
    scale = w.sum(axis=0)
    scale[scale == 0] = 1.0
    w = w / scale
    if h is not None:
        h = h * scale[:, None]
    return w, h


def learn_templates(
    notes_by_instrument: Mapping[str, Sequence[AudioTrack]],
    rank: int = DEFAULT_TEMPLATES,
    iterations: int = DEFAULT_ITERATIONS,
    window: int = DEFAULT_WINDOW,
    seed: int = 0,
) -> TemplateBank:
    """KL-NMF the concatenated note spectrograms of each instrument.

    Only the learned bases are kept. Deterministic given the seed; each
    instrument gets its own substream so banks are stable under
    vocabulary growth.
    """
    if not notes_by_instrument:
        raise DataError("no instruments given")
    if rank < 1:
        raise DataError("rank must be at least 1")
    templates: dict[str, np.ndarray] = {}
    sample_rate = None
    for name in sorted(notes_by_instrument):
        notes = list(notes_by_instrument[name])
        if not notes:
            raise DataError(f"{name}: empty note set")
        if sample_rate is None:
            sample_rate = notes[0].sample_rate
        mags = []
        for note in notes:
            if note.sample_rate != sample_rate:
                raise DataError(f"{name}: inconsistent sample rates in note set")
            mags.append(stft(note, window).magnitude)
        v = np.concatenate(mags, axis=1)
        n_bins = v.shape[0]
        if rank > n_bins:
            raise DataError(f"rank {rank} exceeds {n_bins} frequency bins")
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        w = rng.uniform(0.1, 1.0, size=(n_bins, rank))
        h = rng.uniform(0.1, 1.0, size=(rank, v.shape[1]))
        w, h = _normalize_columns(w, h)
        for _ in range(iterations):
            h = _update_h(v, w, h)
            w = _update_w(v, w, h)
            w, h = _normalize_columns(w, h)
        templates[name] = w
    return TemplateBank(templates, window, sample_rate)


def fit_activations(
    v: np.ndarray,
    w: np.ndarray,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    return_objective: bool = False,
):
    """Nonnegative activations for fixed templates by KL updates."""
    if v.shape[0] != w.shape[0]:
        raise DataError(f"spectrogram has {v.shape[0]} bins, templates {w.shape[0]}")
    rng = np.random.default_rng(seed)
    h = rng.uniform(0.1, 1.0, size=(w.shape[1], v.shape[1]))
    objective = [kl_divergence(v, w @ h)]
    for _ in range(iterations):
        h = _update_h(v, w, h)
        objective.append(kl_divergence(v, w @ h))
    if return_objective:
        return h, objective
    return h


def separate_nmf(
    mix: AudioTrack,
    bank: TemplateBank,
    active: Sequence[str],
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
) -> dict[str, AudioTrack]:
    """Wiener-mask separation of a mixture into the active instruments."""
    names = list(active)
    if not names:
        raise DataError("active instrument set is empty")
    missing = sorted(set(names) - set(bank.templates))
    if missing:
        raise DataError(f"instruments missing from template bank: {missing}")
    if mix.sample_rate != bank.sample_rate:
        raise DataError(
            f"mix sample rate {mix.sample_rate} != bank rate {bank.sample_rate}"
        )

    # pad the tail so overlap-add covers every input sample
    n = mix.samples.shape[0]
    hop = bank.window // 2
    pad = (-(n - bank.window)) % hop if n >= bank.window else bank.window - n
    padded = AudioTrack(np.pad(mix.samples, (0, pad)), mix.sample_rate)
    spec = stft(padded, bank.window)

    blocks = [bank.templates[name] for name in names]
    w = np.concatenate(blocks, axis=1)
    h = fit_activations(spec.magnitude, w, iterations, seed)
    wh = w @ h + EPS

    out: dict[str, AudioTrack] = {}
    col = 0
    for name, block in zip(names, blocks):
        r = block.shape[1]
        mask = (block @ h[col:col + r]) / wh
        col += r
        masked = Spectrogram(
            magnitude=spec.magnitude * mask,
            phase=spec.phase,
            window=spec.window,
            hop=spec.hop,
            sample_rate=spec.sample_rate,
        )
        out[name] = istft(masked, length=n)
    return out
