"""Dataset generation, the on-disk manifest, and training segmentation.

A dataset is a directory of float64 WAV files plus a manifest.json.
Only active sources are stored; absent slots are reconstructed as exact
zeros on load, which keeps mix == sum(sources) bit-exact through the
disk round trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .audio import AudioTrack, read_wav, write_wav
from .errors import DataError
from .model import ShapePlan, align_example_slots
from .synth import EnsembleExample, canonical_vocabulary, generate_piece

MANIFEST_NAME = "manifest.json"
# piece index -> split; every fourth piece held out gives a 75/25 cut
TEST_EVERY = 4


def split_for_index(index: int) -> str:
    return "test" if index % TEST_EVERY == TEST_EVERY - 1 else "train"


@dataclass(frozen=True)
class PieceEntry:
    piece_id: str
    split: str
    instruments: tuple[str, ...]  # active instruments only
    duration_s: float
    seed: int
    mix_path: str
    source_paths: dict[str, str]  # instrument name -> relative path


@dataclass(frozen=True)
class Manifest:
    root: Path
    sample_rate: int
    vocabulary: tuple[str, ...]
    base_seed: int
    pieces: tuple[PieceEntry, ...]

    def by_split(self, split: str) -> list[PieceEntry]:
        return [p for p in self.pieces if p.split == split]

    def entry(self, piece_id: str) -> PieceEntry:
        for p in self.pieces:
            if p.piece_id == piece_id:
                return p
        raise DataError(f"piece {piece_id!r} not in manifest")


def _piece_seed(base_seed: int, index: int) -> int:
    return base_seed * 100_000 + index


def generate_dataset(
    out_dir,
    vocabulary: Sequence[str],
    num_pieces: int,
    ensemble_sizes: Sequence[int],
    seed: int,
    duration_range: tuple[float, float] = (4.0, 8.0),
    sample_rate: int = 8000,
) -> Manifest:
    """Render a corpus of random ensembles to WAV files plus a manifest.

    Ensemble sizes cycle through `ensemble_sizes`; the instruments of
    each piece are a seeded random draw from the vocabulary. Everything
    downstream of (vocabulary, num_pieces, ensemble_sizes, seed,
    duration_range, sample_rate) is deterministic.
    """
    vocab = canonical_vocabulary(vocabulary)
    if num_pieces < 1:
        raise DataError("num_pieces must be positive")
    sizes = list(ensemble_sizes)
    if not sizes or any(s < 2 or s > len(vocab) for s in sizes):
        raise DataError(
            f"ensemble sizes must lie in [2, {len(vocab)}], got {sizes}"
        )
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    entries = []
    for i in range(num_pieces):
        piece_seed = _piece_seed(seed, i)
        rng = np.random.default_rng([piece_seed, 0xD5])  # piece-layout stream
        size = sizes[i % len(sizes)]
        active = tuple(sorted(rng.choice(len(vocab), size=size, replace=False)))
        instruments = tuple(vocab[j] for j in active)
        duration = float(np.round(rng.uniform(*duration_range), 3))
        piece_id = f"piece{i:04d}"
        example = generate_piece(
            instruments, duration, seed=piece_seed, sample_rate=sample_rate,
            vocabulary=vocab, piece_id=piece_id,
        )
        piece_dir = root / piece_id
        piece_dir.mkdir(exist_ok=True)
        mix_rel = f"{piece_id}/mix.wav"
        write_wav(example.mix, root / mix_rel, encoding="float64")
        source_paths = {}
        for slot, name in enumerate(vocab):
            if example.labels[slot]:
                rel = f"{piece_id}/{name}.wav"
                write_wav(example.sources[slot], root / rel, encoding="float64")
                source_paths[name] = rel
        entries.append(PieceEntry(
            piece_id=piece_id,
            split=split_for_index(i),
            instruments=instruments,
            duration_s=duration,
            seed=piece_seed,
            mix_path=mix_rel,
            source_paths=source_paths,
        ))

    manifest = Manifest(
        root=root,
        sample_rate=sample_rate,
        vocabulary=vocab,
        base_seed=seed,
        pieces=tuple(entries),
    )
    write_manifest(manifest)
    return manifest


def write_manifest(manifest: Manifest) -> None:
    doc = {
        "sample_rate": manifest.sample_rate,
        "vocabulary": list(manifest.vocabulary),
        "base_seed": manifest.base_seed,
        "pieces": [
            {
                "piece_id": p.piece_id,
                "split": p.split,
                "instruments": list(p.instruments),
                "duration_s": p.duration_s,
                "seed": p.seed,
                "mix": p.mix_path,
                "sources": dict(sorted(p.source_paths.items())),
            }
            for p in manifest.pieces
        ],
    }
    path = manifest.root / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(root) -> Manifest:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"no {MANIFEST_NAME} in {root}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None
    try:
        pieces = tuple(
            PieceEntry(
                piece_id=p["piece_id"],
                split=p["split"],
                instruments=tuple(p["instruments"]),
                duration_s=float(p["duration_s"]),
                seed=int(p["seed"]),
                mix_path=p["mix"],
                source_paths=dict(p["sources"]),
            )
            for p in doc["pieces"]
        )
        manifest = Manifest(
            root=root,
            sample_rate=int(doc["sample_rate"]),
            vocabulary=tuple(doc["vocabulary"]),
            base_seed=int(doc["base_seed"]),
            pieces=pieces,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: malformed manifest ({e})") from None
    return manifest


def load_example(manifest: Manifest, piece_id: str) -> EnsembleExample:
    """Read one piece back from disk; absent slots become exact zeros."""
    entry = manifest.entry(piece_id)
    mix = read_wav(manifest.root / entry.mix_path)
    if mix.sample_rate != manifest.sample_rate:
        raise DataError(
            f"{entry.mix_path}: sample rate {mix.sample_rate} != manifest "
            f"{manifest.sample_rate}"
        )
    n = mix.samples.shape[0]
    sources = []
    labels = np.zeros(len(manifest.vocabulary), dtype=np.int64)
    for slot, name in enumerate(manifest.vocabulary):
        rel = entry.source_paths.get(name)
        if rel is None:
            sources.append(AudioTrack(np.zeros(n), manifest.sample_rate))
            continue
        track = read_wav(manifest.root / rel)
        if track.samples.shape[0] != n:
            raise DataError(f"{rel}: length {track.samples.shape[0]} != mix length {n}")
        sources.append(track)
        labels[slot] = 1
    return EnsembleExample(
        mix=mix,
        sources=sources,
        labels=labels,
        piece_id=entry.piece_id,
        instruments=manifest.vocabulary,
    )


def segment_examples(
    example: EnsembleExample,
    vocabulary: Sequence[str],
    plan: ShapePlan,
    hop: int,
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Slide a window over a piece: (input [in_len], target [K, out_len], labels).

    Targets are the center crop of the slot-aligned sources under each
    window. A piece shorter than the input length yields nothing.
    """
    if hop < 1:
        raise DataError("hop must be positive")
    sources, labels = align_example_slots(example, vocabulary)
    n = example.mix.samples.shape[0]
    for offset in range(0, n - plan.input_length + 1, hop):
        window = example.mix.samples[offset:offset + plan.input_length]
        start = offset + plan.margin
        target = sources[:, start:start + plan.output_length]
        yield window, target, labels
