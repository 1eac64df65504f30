"""Training loop: batched segments, MSE over all source slots, Adam.

Absent instruments appear in the targets as exact zeros, so the same
unweighted MSE that fits active sources also pushes absent slots toward
silence. The loop is deterministic given the seed: segments are drawn
in seeded shuffled order, single-threaded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_model
from .errors import ConfigError, TrainingDiverged
from .model import ShapePlan, WaveUNet, align_example_slots, plan_shapes
from .optim import Adam
from .synth import EnsembleExample
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 4
    max_steps: int = 1000
    seed: int = 0
    validation_interval: int = 200
    checkpoint_interval: int = 0  # 0: checkpoint only at the end
    segment_length: int = 2048  # requested model output samples per window
    segment_hop: int = 0  # 0: hop equals the plan's output length
    val_max_segments: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        if self.segment_length < 1:
            raise ConfigError("segment_length must be positive")
        if self.segment_hop < 0:
            raise ConfigError("segment_hop must be nonnegative")
        if self.validation_interval < 1:
            raise ConfigError("validation_interval must be positive")


@dataclass
class LossRow:
    step: int
    train_loss: float
    val_loss: float | None
    silent_slot_loss: float | None
    active_slot_loss: float | None


@dataclass
class ValidationResult:
    mean_loss: float
    silent_slot_loss: float | None
    active_slot_loss: float | None
    num_segments: int


@dataclass
class TrainResult:
    rows: list[LossRow]
    final_step: int
    checkpoint_path: Path | None


class _SegmentBank:
    """All training windows of a corpus, sliceable by flat index."""

    def __init__(self, examples: Sequence[EnsembleExample], vocabulary, plan: ShapePlan, hop: int):
        self.plan = plan
        self.pieces = []  # (mix [N], sources [K, N], labels [K])
        self.index: list[tuple[int, int]] = []  # (piece index, window offset)
        for pi, ex in enumerate(examples):
            sources, labels = align_example_slots(ex, vocabulary)
            mix = ex.mix.samples
            self.pieces.append((mix, sources, labels.astype(np.float64)))
            for off in range(0, mix.shape[0] - plan.input_length + 1, hop):
                self.index.append((pi, off))

    def __len__(self) -> int:
        return len(self.index)

    def fetch(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, str]:
        pi, off = self.index[i]
        mix, sources, labels = self.pieces[pi]
        plan = self.plan
        window = mix[off:off + plan.input_length]
        start = off + plan.margin
        target = sources[:, start:start + plan.output_length]
        return window, target, labels, f"piece{pi}@{off}"


def _slot_breakdown(sq_err: np.ndarray, labels: np.ndarray) -> tuple[float | None, float | None, int, int]:
    """Mean squared error split into silent and active slots."""
    silent = labels == 0
    s = float(sq_err[silent].mean()) if silent.any() else None
    a = float(sq_err[~silent].mean()) if (~silent).any() else None
    return s, a, int(silent.sum()), int((~silent).sum())


def _batch_loss(model: WaveUNet, bank: _SegmentBank, indices) -> tuple[Tensor, dict]:
    """Graph for the mean segment loss plus logging stats (no autodiff)."""
    conditioned = model.config.conditioning_enabled
    total: Tensor | None = None
    silent_sum = active_sum = 0.0
    silent_n = active_n = 0
    first_id = None
    for i in indices:
        window, target, labels, seg_id = bank.fetch(int(i))
        if first_id is None:
            first_id = seg_id
        out = model.forward(window, labels if conditioned else None)
        loss = T.mse_loss(out, Tensor(target.astype(model.dtype)))
        total = loss if total is None else T.add(total, loss)
        sq = (out.data - target) ** 2
        per_slot = sq.mean(axis=1)
        s, a, ns, na = _slot_breakdown(per_slot, labels)
        if s is not None:
            silent_sum += s * ns
            silent_n += ns
        if a is not None:
            active_sum += a * na
            active_n += na
    stats = {
        "silent": silent_sum / silent_n if silent_n else None,
        "active": active_sum / active_n if active_n else None,
        "batch_id": first_id,
    }
    return T.scale(total, 1.0 / len(indices)), stats


def validate(
    model: WaveUNet,
    examples: Sequence[EnsembleExample],
    config: TrainConfig,
    plan: ShapePlan | None = None,
) -> ValidationResult:
    """Mean loss over a deterministic prefix of validation windows.

    Forward passes only; parameters are left untouched.
    """
    if plan is None:
        plan = plan_shapes(model.config, config.segment_length)
    hop = config.segment_hop or plan.output_length
    bank = _SegmentBank(examples, model.vocabulary, plan, hop)
    n = min(len(bank), config.val_max_segments) if config.val_max_segments else len(bank)
    if n == 0:
        return ValidationResult(float("nan"), None, None, 0)
    conditioned = model.config.conditioning_enabled
    loss_sum = 0.0
    silent_sum = active_sum = 0.0
    silent_n = active_n = 0
    for i in range(n):
        window, target, labels, _ = bank.fetch(i)
        out = model.forward(window, labels if conditioned else None)
        sq = (out.data - target) ** 2
        loss_sum += float(sq.mean())
        s, a, ns, na = _slot_breakdown(sq.mean(axis=1), labels)
        if s is not None:
            silent_sum += s * ns
            silent_n += ns
        if a is not None:
            active_sum += a * na
            active_n += na
    return ValidationResult(
        mean_loss=loss_sum / n,
        silent_slot_loss=silent_sum / silent_n if silent_n else None,
        active_slot_loss=active_sum / active_n if active_n else None,
        num_segments=n,
    )


def train(
    model: WaveUNet,
    train_examples: Sequence[EnsembleExample],
    val_examples: Sequence[EnsembleExample],
    config: TrainConfig,
    checkpoint_dir=None,
    start_step: int = 0,
    optimizer: Adam | None = None,
) -> TrainResult:
    """Run max_steps Adam steps; returns the loss log and last checkpoint.

    Pass `start_step` plus the restored optimizer to continue a previous
    run; step numbering carries on from there.
    """
    plan = plan_shapes(model.config, config.segment_length)
    hop = config.segment_hop or plan.output_length
    bank = _SegmentBank(train_examples, model.vocabulary, plan, hop)
    if len(bank) == 0:
        raise ConfigError(
            f"no training windows: pieces are shorter than {plan.input_length} samples"
        )
    opt = optimizer if optimizer is not None else Adam(model.params, lr=config.lr)
    rng = np.random.default_rng([config.seed, start_step])

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def batches():
        while True:
            order = rng.permutation(len(bank))
            for lo in range(0, len(order), config.batch_size):
                yield order[lo:lo + config.batch_size]

    rows: list[LossRow] = []
    last_ckpt: Path | None = None
    step = start_step
    batch_iter = batches()
    for _ in range(config.max_steps):
        step += 1
        loss, stats = _batch_loss(model, bank, next(batch_iter))
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(step, stats["batch_id"])
        opt.zero_grad()
        loss.backward()
        opt.step()

        val_loss = None
        if step % config.validation_interval == 0 or step == start_step + config.max_steps:
            val_loss = validate(model, val_examples, config, plan).mean_loss if val_examples else None
        rows.append(LossRow(step, value, val_loss, stats["silent"], stats["active"]))

        at_interval = config.checkpoint_interval and step % config.checkpoint_interval == 0
        if ckpt_dir is not None and (at_interval or step == start_step + config.max_steps):
            last_ckpt = ckpt_dir / f"step{step:07d}.tensors"
            save_model(last_ckpt, model, step, opt)

    return TrainResult(rows=rows, final_step=step, checkpoint_path=last_ckpt)


def write_loss_csv(path, rows: Sequence[LossRow]) -> None:
    """CSV loss log; floats via repr so a rerun is byte-identical."""
    def fmt(x):
        return "" if x is None else repr(x)

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "train_loss", "val_loss", "silent_slot_loss", "active_slot_loss"])
        for r in rows:
            w.writerow([r.step, fmt(r.train_loss), fmt(r.val_loss),
                        fmt(r.silent_slot_loss), fmt(r.active_slot_loss)])
