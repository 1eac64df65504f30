"""Flat binary container for named arrays, and model checkpoints on top.

Layout (all integers little-endian):

    bytes 0..7    magic "WSEPTNSR"
    bytes 8..11   u32 format version (currently 1)
    bytes 12..19  u64 header length H
    bytes 20..    UTF-8 JSON header of H bytes:
                  {"meta": {...}, "tensors": [{"name","shape","dtype"}, ...]}
    then          raw array data, C order, in header order

A model checkpoint is this container with the network weights, the
optimizer moments under "opt.m.<name>" / "opt.v.<name>", and meta
carrying the model config, the instrument vocabulary, and step counts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ModelError
from .model import ModelConfig, WaveUNet
from .optim import Adam
from .tensor import Tensor

MAGIC = b"WSEPTNSR"
FORMAT_VERSION = 1
FILE_SUFFIX = ".tensors"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def save_arrays(path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ModelError(f"cannot serialize {name!r}: unsupported dtype {dtype}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes())
    header = json.dumps(
        {"meta": meta or {}, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(FORMAT_VERSION).tobytes())
        f.write(np.uint64(len(header)).tobytes())
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise ModelError(f"{path}: not a tensor container")
    version = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise ModelError(f"{path}: unsupported container version {version}")
    header_len = int(np.frombuffer(raw[12:20], dtype="<u8")[0])
    try:
        header = json.loads(raw[20:20 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelError(f"{path}: corrupt container header ({e})") from None
    arrays: dict[str, np.ndarray] = {}
    offset = 20 + header_len
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        dtype = entry["dtype"]
        if dtype not in _DTYPES:
            raise ModelError(f"{path}: unsupported dtype {dtype} for {entry['name']!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(_DTYPES[dtype]).itemsize
        if offset + nbytes > len(raw):
            raise ModelError(f"{path}: container truncated at {entry['name']!r}")
        data = np.frombuffer(raw, dtype=_DTYPES[dtype], count=count, offset=offset)
        arrays[entry["name"]] = data.astype(dtype).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise ModelError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, header.get("meta", {})


@dataclass(frozen=True)
class CheckpointInfo:
    config: ModelConfig
    vocabulary: tuple[str, ...]
    step: int
    opt_step_count: int = 0


def save_model(path, model: WaveUNet, step: int, optimizer: Adam | None = None) -> None:
    arrays = {name: p.data for name, p in model.params.items()}
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    meta = {
        "kind": "waveunet",
        "config": asdict(model.config),
        "vocabulary": list(model.vocabulary),
        "step": int(step),
        "opt_step_count": optimizer.step_count if optimizer is not None else 0,
    }
    save_arrays(path, arrays, meta)


def load_model(path, expected_sources: int | None = None) -> tuple[WaveUNet, CheckpointInfo, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint.

    Returns the model, its checkpoint info, and any optimizer-state
    arrays present (empty dict for inference-only checkpoints). A K
    different from expected_sources fails instead of silently remapping
    slots.
    """
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "waveunet":
        raise ModelError(f"{path}: not a model checkpoint (kind={meta.get('kind')!r})")
    try:
        config = ModelConfig(**meta["config"])
        vocabulary = tuple(meta["vocabulary"])
        step = int(meta["step"])
    except (KeyError, TypeError) as e:
        raise ModelError(f"{path}: malformed checkpoint metadata ({e})") from None
    if expected_sources is not None and config.num_sources != expected_sources:
        raise ModelError(
            f"{path}: checkpoint has K={config.num_sources} source slots, "
            f"expected K={expected_sources}"
        )
    sample = arrays.get("out.weight")
    dtype = sample.dtype if sample is not None else np.float64
    model = WaveUNet(config, vocabulary, seed=0, dtype=dtype)
    for name, param in model.params.items():
        if name not in arrays:
            raise ModelError(f"{path}: checkpoint missing parameter {name!r}")
        if arrays[name].shape != param.data.shape:
            raise ModelError(
                f"{path}: parameter {name!r} has shape {arrays[name].shape}, "
                f"model expects {param.data.shape}"
            )
        param.data = arrays[name].astype(model.dtype)
    opt_state = {k: v for k, v in arrays.items() if k.startswith(("opt.m.", "opt.v."))}
    info = CheckpointInfo(
        config, vocabulary, step, int(meta.get("opt_step_count", 0))
    )
    return model, info, opt_state
