"""Label-conditioned Wave-U-Net for waveform source separation.

The network is a 1-D encoder/decoder with skip connections built from
valid (unpadded) convolutions, so outputs are shorter than inputs and
every usable input length must satisfy a parity calculus: `plan_shapes`
finds the smallest input whose forward pass is shape-valid and covers a
requested output length.

The model always emits a fixed number of source slots K. A binary
label vector can gate the bottleneck features multiplicatively
(a learned affine map K -> channels, squashed by a sigmoid), which lets
the network suppress sources that are known to be absent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .audio import rms_dbfs
from .errors import DataError, ModelError
from .synth import EnsembleExample
from .tensor import Tensor

DEFAULT_THRESHOLD_DBFS = -40.0

# plan_shapes gives up past this input size; deeper stacks than this
# supports are outside desk scale anyway
MAX_PLAN_INPUT = 1 << 22


@dataclass(frozen=True)
class ModelConfig:
    num_sources: int = 4
    depth: int = 6
    base_filters: int = 24
    filter_growth: int = 24
    kernel_down: int = 15
    kernel_up: int = 5
    leaky_slope: float = 0.01
    conditioning_enabled: bool = False
    output_activation: str = "tanh"

    def __post_init__(self):
        if self.num_sources < 2:
            raise ModelError("num_sources must be at least 2")
        # depth 0 is allowed here so the shape calculus can express the
        # degenerate bottleneck-only stack; WaveUNet itself requires >= 1
        if self.depth < 0:
            raise ModelError("depth must be nonnegative")
        for name in ("kernel_down", "kernel_up"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ModelError(f"{name} must be odd and positive, got {k}")
        if self.base_filters < 1 or self.filter_growth < 0:
            raise ModelError("base_filters must be positive, filter_growth nonnegative")
        if not (0.0 < self.leaky_slope < 1.0):
            raise ModelError("leaky_slope must lie in (0, 1)")
        if self.output_activation != "tanh":
            raise ModelError(f"unsupported output activation {self.output_activation!r}")

    @property
    def encoder_channels(self) -> tuple[int, ...]:
        g = self.filter_growth
        return tuple(self.base_filters + g * i for i in range(self.depth))

    @property
    def bottleneck_channels(self) -> int:
        return self.base_filters + self.filter_growth * self.depth


@dataclass(frozen=True)
class ShapePlan:
    """Every intermediate feature length of one shape-valid forward pass."""

    input_length: int
    skip_lengths: tuple[int, ...]  # after each encoder conv, shallow to deep
    down_lengths: tuple[int, ...]  # after each decimation
    bottleneck_length: int
    up_lengths: tuple[int, ...]  # after each decoder conv, deep to shallow
    output_length: int

    @property
    def margin(self) -> int:
        """Samples dropped from each side of the input by the network."""
        return (self.input_length - self.output_length) // 2


def simulate_shapes(config: ModelConfig, input_length: int) -> ShapePlan | None:
    """Walk the shape laws for one input length; None if any step is invalid.

    Laws: valid conv L -> L-k+1 (needs L >= k), decimation L -> ceil(L/2),
    linear 2x upsampling L -> 2L-1 (needs L >= 2), skip crop needs a
    nonnegative even length difference.
    """
    if input_length < 1:
        return None
    length = input_length
    skips: list[int] = []
    downs: list[int] = []
    for _ in range(config.depth):
        if length < config.kernel_down:
            return None
        length = length - config.kernel_down + 1
        skips.append(length)
        length = (length + 1) // 2
        downs.append(length)
    if length < config.kernel_down:
        return None
    length = length - config.kernel_down + 1
    bottleneck = length
    ups: list[int] = []
    for skip in reversed(skips):
        if length < 2:
            return None
        length = 2 * length - 1
        diff = skip - length
        if diff < 0 or diff % 2 != 0:
            return None
        if length < config.kernel_up:
            return None
        length = length - config.kernel_up + 1
        ups.append(length)
    # the source head is a length-preserving kernel-1 conv
    if length < 1:
        return None
    return ShapePlan(
        input_length=input_length,
        skip_lengths=tuple(skips),
        down_lengths=tuple(downs),
        bottleneck_length=bottleneck,
        up_lengths=tuple(ups),
        output_length=length,
    )


def plan_shapes(config: ModelConfig, requested_output: int) -> ShapePlan:
    """Smallest valid input length whose output covers requested_output.

    Output length grows with input length over valid plans, so the first
    hit of an ascending scan is the minimum.
    """
    if requested_output < 1:
        raise ModelError("requested_output must be at least 1")
    for candidate in range(requested_output, MAX_PLAN_INPUT + 1):
        plan = simulate_shapes(config, candidate)
        if plan is not None and plan.output_length >= requested_output:
            return plan
    raise ModelError(
        f"no valid input length up to {MAX_PLAN_INPUT} for depth {config.depth} "
        f"and requested output {requested_output}"
    )


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    c_out, c_in, k = shape
    limit = np.sqrt(6.0 / ((c_in + c_out) * k))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def condition_bottleneck(z: Tensor, labels: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Scale bottleneck features per channel by sigmoid(W @ c + b).

    labels is [K, 1]; weight [C, K, 1] and bias [C] form the affine map,
    expressed as a kernel-1 conv so gradients flow through the shared
    graph machinery. The gate is [C, 1] and broadcasts over time.
    """
    gate = T.sigmoid(T.conv1d_valid(labels, weight, bias))
    return T.mul(z, gate)


class WaveUNet:
    """Parameter container plus the forward pass.

    Parameters live in a flat name -> Tensor mapping (the optimizer and
    checkpoint formats consume it directly). `vocabulary` names the K
    output slots in their canonical (sorted) order.
    """

    def __init__(
        self,
        config: ModelConfig,
        vocabulary: Sequence[str],
        seed: int = 0,
        dtype=np.float64,
    ):
        if config.depth < 1:
            raise ModelError("WaveUNet requires depth >= 1")
        vocab = tuple(vocabulary)
        if len(vocab) != config.num_sources:
            raise ModelError(
                f"vocabulary has {len(vocab)} names for {config.num_sources} source slots"
            )
        if len(set(vocab)) != len(vocab) or list(vocab) != sorted(vocab):
            raise ModelError("vocabulary must be unique and sorted")
        self.config = config
        self.vocabulary = vocab
        self.dtype = np.dtype(dtype)
        self.params = self._init_params(seed)
        self._plan_cache: dict[int, ShapePlan | None] = {}

    def _init_params(self, seed: int) -> dict[str, Tensor]:
        cfg = self.config
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}

        def add(name: str, c_out: int, c_in: int, k: int):
            params[f"{name}.weight"] = Tensor(
                _glorot(rng, (c_out, c_in, k), self.dtype),
                requires_grad=True, name=f"{name}.weight",
            )
            params[f"{name}.bias"] = Tensor(
                np.zeros(c_out, dtype=self.dtype),
                requires_grad=True, name=f"{name}.bias",
            )

        enc = cfg.encoder_channels
        c_prev = 1
        for i, c in enumerate(enc, start=1):
            add(f"enc{i}", c, c_prev, cfg.kernel_down)
            c_prev = c
        add("bottleneck", cfg.bottleneck_channels, c_prev, cfg.kernel_down)
        if cfg.conditioning_enabled:
            add("cond", cfg.bottleneck_channels, cfg.num_sources, 1)
        c_prev = cfg.bottleneck_channels
        for i in range(cfg.depth, 0, -1):
            c_skip = enc[i - 1]
            add(f"dec{i}", enc[i - 1], c_skip + c_prev, cfg.kernel_up)
            c_prev = enc[i - 1]
        add("out", cfg.num_sources, c_prev, 1)
        return params

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def plan_for_input(self, input_length: int) -> ShapePlan:
        if input_length not in self._plan_cache:
            self._plan_cache[input_length] = simulate_shapes(self.config, input_length)
        plan = self._plan_cache[input_length]
        if plan is None:
            raise ModelError(f"input length {input_length} is not shape-valid for this model")
        return plan

    def _as_labels_tensor(self, labels) -> Tensor:
        arr = np.asarray(labels, dtype=self.dtype).reshape(-1)
        if arr.shape[0] != self.config.num_sources:
            raise ModelError(
                f"label vector has {arr.shape[0]} entries for K={self.config.num_sources}"
            )
        return Tensor(arr.reshape(-1, 1))

    def forward(self, mix, labels=None) -> Tensor:
        """Mix segment [L] or [1, L] -> source estimates [K, output_length].

        The length must be shape-valid (see plan_shapes); there is no
        implicit padding. Labels are required exactly when conditioning
        is enabled, and ignored otherwise.
        """
        cfg = self.config
        if isinstance(mix, Tensor):
            x = mix
        else:
            arr = np.asarray(mix, dtype=self.dtype)
            if arr.ndim == 1:
                arr = arr[None, :]
            x = Tensor(arr)
        if x.data.ndim != 2 or x.shape[0] != 1:
            raise ModelError(f"expected a mono segment, got shape {x.shape}")
        self.plan_for_input(x.shape[1])

        if cfg.conditioning_enabled and labels is None:
            raise ModelError("conditioning is enabled but no labels were given")

        p = self.params
        slope = cfg.leaky_slope
        skips: list[Tensor] = []
        h = x
        for i in range(1, cfg.depth + 1):
            h = T.leaky_relu(
                T.conv1d_valid(h, p[f"enc{i}.weight"], p[f"enc{i}.bias"]), slope
            )
            skips.append(h)
            h = T.decimate2(h)
        h = T.leaky_relu(
            T.conv1d_valid(h, p["bottleneck.weight"], p["bottleneck.bias"]), slope
        )
        if cfg.conditioning_enabled:
            h = condition_bottleneck(
                h, self._as_labels_tensor(labels), p["cond.weight"], p["cond.bias"]
            )
        for i in range(cfg.depth, 0, -1):
            h = T.lininterp_upsample2(h)
            h = T.crop_concat(skips[i - 1], h)
            h = T.leaky_relu(
                T.conv1d_valid(h, p[f"dec{i}.weight"], p[f"dec{i}.bias"]), slope
            )
        return T.tanh(T.conv1d_valid(h, p["out.weight"], p["out.bias"]))


def labels_from_names(names: Sequence[str], vocabulary: Sequence[str]) -> np.ndarray:
    """Binary label vector over the model vocabulary; unknown names fail."""
    vocab = list(vocabulary)
    bits = np.zeros(len(vocab), dtype=np.int64)
    for name in names:
        try:
            bits[vocab.index(name)] = 1
        except ValueError:
            raise DataError(f"instrument {name!r} not in model vocabulary") from None
    return bits


def align_example_slots(
    example: EnsembleExample, vocabulary: Sequence[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Map an example's sources onto model slots: ([K, N] sources, [K] labels).

    Slots for instruments the example does not carry are exact zeros. An
    active example instrument missing from the model vocabulary is an
    error; silent extras are dropped.
    """
    vocab = list(vocabulary)
    n = example.mix.samples.shape[0]
    out = np.zeros((len(vocab), n))
    labels = np.zeros(len(vocab), dtype=np.int64)
    for name, src, bit in zip(example.instruments, example.sources, example.labels):
        if name in vocab:
            slot = vocab.index(name)
            out[slot] = src.samples
            labels[slot] = int(bit)
        elif bit:
            raise DataError(f"active instrument {name!r} not in model vocabulary")
    return out, labels


def make_training_target(
    example: EnsembleExample,
    vocabulary: Sequence[str],
    plan: ShapePlan,
    offset: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Slot-aligned regression target for one input window of an example.

    Returns ([K, output_length] target, [K] labels). The target is the
    center crop of each slot source over the window starting at
    `offset`: silent slots stay exact zeros, which is what the loss
    trains absent sources toward.
    """
    sources, labels = align_example_slots(example, vocabulary)
    n = sources.shape[1]
    if offset < 0 or offset + plan.input_length > n:
        raise DataError(
            f"window [{offset}, {offset + plan.input_length}) outside example of {n} samples"
        )
    start = offset + plan.margin
    return sources[:, start:start + plan.output_length].copy(), labels


def separate_track(
    model: WaveUNet, samples: np.ndarray, labels=None, segment_output: int = 4096
) -> np.ndarray:
    """Separate a full track by tiling fixed-size windows: [K, N] estimates.

    The input is padded with the plan margin of zeros on the left plus
    whatever the final window needs on the right, so consecutive outputs
    tile the track seamlessly at hop = output length.
    """
    x = np.asarray(samples, dtype=model.dtype).reshape(-1)
    n = x.shape[0]
    if n < 1:
        raise ModelError("cannot separate an empty track")
    plan = plan_shapes(model.config, min(segment_output, max(n, 1)))
    out_len = plan.output_length
    windows = -(-n // out_len)  # ceil
    padded = np.zeros(windows * out_len + 2 * plan.margin, dtype=model.dtype)
    padded[plan.margin:plan.margin + n] = x
    out = np.empty((model.config.num_sources, windows * out_len))
    for w in range(windows):
        lo = w * out_len
        est = model.forward(padded[lo:lo + plan.input_length], labels)
        out[:, lo:lo + out_len] = est.data
    return out[:, :n]


def extract_active_sources(
    outputs, threshold_db: float = DEFAULT_THRESHOLD_DBFS
) -> list[tuple[int, np.ndarray]]:
    """Slots whose RMS level is strictly above threshold_db (dBFS)."""
    arr = outputs.data if isinstance(outputs, Tensor) else np.asarray(outputs)
    if arr.ndim != 2:
        raise ModelError(f"expected [K, L] source estimates, got shape {arr.shape}")
    return [
        (slot, arr[slot]) for slot in range(arr.shape[0])
        if rms_dbfs(arr[slot]) > threshold_db
    ]
