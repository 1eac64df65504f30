"""Run configuration: strict JSON parsing and resolved-config snapshots.

Unknown keys anywhere in the file are rejected rather than ignored, so
a typo cannot silently fall back to a default. Every command writes the
fully resolved configuration it ran with next to its outputs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, WavesepError
from .model import ModelConfig
from .train import TrainConfig


@dataclass(frozen=True)
class DatasetParams:
    vocabulary: tuple[str, ...] = ("bass", "brass", "flute", "reed")
    num_pieces: int = 40
    ensemble_sizes: tuple[int, ...] = (2, 3, 4)
    seed: int = 0
    duration_range: tuple[float, float] = (4.0, 8.0)
    sample_rate: int = 8000

    def __post_init__(self):
        if self.num_pieces < 1:
            raise ConfigError("dataset.num_pieces must be positive")
        if self.sample_rate < 1:
            raise ConfigError("dataset.sample_rate must be positive")
        lo, hi = self.duration_range
        if not (0 < lo <= hi):
            raise ConfigError("dataset.duration_range must be 0 < lo <= hi")


@dataclass(frozen=True)
class MetricsParams:
    segment_seconds: float = 1.0
    silence_eps_dbfs: float = -60.0

    def __post_init__(self):
        if self.segment_seconds <= 0:
            raise ConfigError("metrics.segment_seconds must be positive")


@dataclass(frozen=True)
class BaselineParams:
    rank: int = 8
    iterations: int = 100
    window: int = 512
    seed: int = 0
    notes_per_instrument: int = 10
    note_duration_s: float = 0.5

    def __post_init__(self):
        if self.rank < 1 or self.iterations < 1 or self.notes_per_instrument < 1:
            raise ConfigError("baseline.rank/iterations/notes_per_instrument must be positive")


_SECTIONS = {
    "dataset": DatasetParams,
    "model": ModelConfig,
    "train": TrainConfig,
    "metrics": MetricsParams,
    "baseline": BaselineParams,
}

# JSON gives lists; these fields want tuples
_TUPLE_FIELDS = {"vocabulary", "ensemble_sizes", "duration_range"}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetParams
    model: ModelConfig
    train: TrainConfig
    metrics: MetricsParams
    baseline: BaselineParams


def _build_section(name: str, cls, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key {name}.{unknown[0]}")
    kwargs = {}
    for key, value in values.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except WavesepError as e:
        raise ConfigError(f"{name}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from None


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Parse a config file (all sections optional) plus flag overrides.

    `overrides` maps section name to a dict of field replacements, used
    for command-line flags like --conditioning.
    """
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON ({e})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be an object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section {unknown[0]!r}")

    sections = {}
    for name, cls in _SECTIONS.items():
        raw = doc.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        values = dict(raw)
        for key, value in (overrides or {}).get(name, {}).items():
            values[key] = value
        sections[name] = _build_section(name, cls, values)
    return RunConfig(**sections)


def resolved_dict(config: RunConfig, command: str, extras: dict | None = None) -> dict:
    doc = {"command": command}
    for name in _SECTIONS:
        doc[name] = dataclasses.asdict(getattr(config, name))
    if extras:
        doc["invocation"] = extras
    return doc


def write_snapshot(out_dir, config: RunConfig, command: str, extras: dict | None = None) -> Path:
    """Drop resolved_config.json next to a run's outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    path.write_text(json.dumps(resolved_dict(config, command, extras),
                               indent=2, sort_keys=True) + "\n")
    return path
