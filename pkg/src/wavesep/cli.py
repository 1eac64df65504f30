"""Batch command line: generate, train, separate, evaluate, baseline.

Every command is reproducible from its resolved-config snapshot plus
its inputs; errors exit nonzero with a one-line category diagnostic.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .audio import AudioTrack, read_wav, rms_dbfs, write_wav
from .checkpoint import load_model
from .config import load_run_config, write_snapshot
from .dataset import generate_dataset, load_example, load_manifest
from .errors import ConfigError, DataError, ModelError, WavesepError
from .metrics import (
    aggregate,
    evaluate_slots,
    write_records_csv,
    write_report_json,
)
from .model import WaveUNet, labels_from_names, separate_track
from .nmf import TemplateBank, learn_templates, separate_nmf
from .optim import Adam
from .synth import INSTRUMENTS, SILENCE_EPS_DBFS, synth_note
from .train import train, write_loss_csv

EXIT_CODES = {"config": 2, "data": 3, "model": 4, "internal": 1}


def _require_empty_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise DataError(
            f"output directory {path} is not empty (use --force to overwrite)"
        )


def cmd_generate(args) -> int:
    config = load_run_config(args.config)
    out = Path(args.out)
    _require_empty_dir(out, args.force)
    ds = config.dataset
    manifest = generate_dataset(
        out,
        vocabulary=ds.vocabulary,
        num_pieces=ds.num_pieces,
        ensemble_sizes=ds.ensemble_sizes,
        seed=ds.seed,
        duration_range=ds.duration_range,
        sample_rate=ds.sample_rate,
    )
    write_snapshot(out, config, "generate", {"out": str(out)})
    n_train = len(manifest.by_split("train"))
    n_test = len(manifest.by_split("test"))
    print(f"generated {len(manifest.pieces)} pieces "
          f"({n_train} train, {n_test} test) in {out}")
    return 0


def _conditioning_override(args) -> dict:
    if args.conditioning is None:
        return {}
    return {"model": {"conditioning_enabled": args.conditioning == "on"}}


def cmd_train(args) -> int:
    config = load_run_config(args.config, _conditioning_override(args))
    manifest = load_manifest(args.dataset)
    vocab = manifest.vocabulary
    if config.model.num_sources != len(vocab):
        raise ConfigError(
            f"model.num_sources={config.model.num_sources} but the dataset "
            f"vocabulary has {len(vocab)} instruments"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    start_step = 0
    optimizer = None
    if args.resume:
        model, info, opt_state = load_model(args.resume, expected_sources=len(vocab))
        if info.vocabulary != vocab:
            raise ModelError(
                f"checkpoint vocabulary {list(info.vocabulary)} does not match "
                f"dataset vocabulary {list(vocab)}"
            )
        if model.config != config.model:
            raise ConfigError(
                "checkpoint model configuration differs from the requested one; "
                "drop --resume or align the config"
            )
        start_step = info.step
        optimizer = Adam(model.params, lr=config.train.lr)
        if opt_state:
            optimizer.load_state_arrays(opt_state, info.opt_step_count)
    else:
        model = WaveUNet(config.model, vocab, seed=config.train.seed)

    train_examples = [load_example(manifest, p.piece_id) for p in manifest.by_split("train")]
    if not train_examples:
        raise DataError("dataset has no training pieces")
    val_examples = [load_example(manifest, p.piece_id) for p in manifest.by_split("test")]

    write_snapshot(out, config, "train", {
        "dataset": str(args.dataset), "out": str(out),
        "resume": str(args.resume) if args.resume else None,
        "parameter_count": model.parameter_count(),
    })
    result = train(
        model, train_examples, val_examples, config.train,
        checkpoint_dir=out, start_step=start_step, optimizer=optimizer,
    )
    write_loss_csv(out / "loss.csv", result.rows)
    print(f"trained to step {result.final_step}; "
          f"final train loss {result.rows[-1].train_loss:.6g}; "
          f"checkpoint {result.checkpoint_path}")
    return 0


def _write_estimates(out_dir: Path, vocab, estimates: np.ndarray, sample_rate: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for slot, name in enumerate(vocab):
        clipped = np.clip(estimates[slot], -1.0, 1.0)
        write_wav(AudioTrack(clipped, sample_rate), out_dir / f"{name}.wav",
                  encoding="float64")


def _active_report(vocab, mix: np.ndarray, estimates: np.ndarray,
                   threshold_db: float) -> dict:
    # a silent mixture contains no sources, whatever the network emits
    mix_audible = rms_dbfs(mix) > SILENCE_EPS_DBFS
    slots = []
    for slot, name in enumerate(vocab):
        level = rms_dbfs(estimates[slot])
        slots.append({
            "slot": slot,
            "instrument": name,
            "est_rms_dbfs": level,
            "active": bool(mix_audible and level > threshold_db),
        })
    return {"threshold_db": threshold_db, "slots": slots}


def cmd_separate(args) -> int:
    config = load_run_config(args.config)
    model, info, _ = load_model(args.checkpoint)
    vocab = info.vocabulary
    conditioned = model.config.conditioning_enabled
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if (args.input is None) == (args.dataset is None):
        raise ConfigError("pass exactly one of --input or --dataset")

    if args.labels is not None and not conditioned:
        print("warning: checkpoint is unconditioned; --labels ignored",
              file=sys.stderr)

    seg = config.train.segment_length
    reports = {}
    if args.input is not None:
        track = read_wav(args.input)
        labels = None
        if conditioned:
            if args.labels is None:
                raise ModelError(
                    "checkpoint is a conditioned model: pass --labels with the "
                    "active instruments (comma separated)"
                )
            labels = labels_from_names(
                [s for s in args.labels.split(",") if s], vocab
            )
        estimates = separate_track(model, track.samples, labels, segment_output=seg)
        _write_estimates(out, vocab, estimates, track.sample_rate)
        reports["input"] = _active_report(vocab, track.samples, estimates,
                                          args.threshold_db)
    else:
        manifest = load_manifest(args.dataset)
        if manifest.vocabulary != vocab:
            raise ModelError(
                f"checkpoint vocabulary {list(vocab)} does not match dataset "
                f"vocabulary {list(manifest.vocabulary)}"
            )
        for entry in manifest.by_split(args.split):
            ex = load_example(manifest, entry.piece_id)
            labels = labels_from_names(entry.instruments, vocab) if conditioned else None
            estimates = separate_track(model, ex.mix.samples, labels, segment_output=seg)
            _write_estimates(out / entry.piece_id, vocab, estimates,
                             manifest.sample_rate)
            reports[entry.piece_id] = _active_report(
                vocab, ex.mix.samples, estimates, args.threshold_db)

    report_path = out / "active_slots.json"
    report_path.write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    write_snapshot(out, config, "separate", {
        "checkpoint": str(args.checkpoint),
        "input": str(args.input) if args.input else None,
        "dataset": str(args.dataset) if args.dataset else None,
        "split": args.split,
        "threshold_db": args.threshold_db,
        "labels": args.labels,
    })
    n_active = sum(sum(s["active"] for s in r["slots"]) for r in reports.values())
    print(f"wrote estimates for {len(reports)} track(s) to {out}; "
          f"{n_active} active slot(s) above {args.threshold_db} dBFS")
    return 0


def cmd_evaluate(args) -> int:
    config = load_run_config(args.config)
    manifest = load_manifest(args.dataset)
    est_root = Path(args.estimates)
    if not est_root.is_dir():
        raise DataError(f"estimates directory not found: {est_root}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    seg_len = int(round(config.metrics.segment_seconds * manifest.sample_rate))
    records = []
    pieces = manifest.by_split(args.split)
    if not pieces:
        raise DataError(f"dataset has no pieces in split {args.split!r}")
    for entry in pieces:
        ex = load_example(manifest, entry.piece_id)
        n = ex.mix.samples.shape[0]
        refs = np.stack([s.samples for s in ex.sources])
        ests = np.zeros_like(refs)
        piece_dir = est_root / entry.piece_id
        for slot, name in enumerate(manifest.vocabulary):
            wav = piece_dir / f"{name}.wav"
            if not wav.is_file():
                continue  # missing estimate counts as silence
            track = read_wav(wav)
            if track.samples.shape[0] != n:
                raise DataError(
                    f"{wav}: {track.samples.shape[0]} samples, reference has {n}"
                )
            ests[slot] = track.samples
        records.extend(evaluate_slots(
            entry.piece_id, ests, refs, manifest.vocabulary,
            segment_length=min(seg_len, n),
            silence_eps_dbfs=config.metrics.silence_eps_dbfs,
        ))

    write_records_csv(out / "records.csv", records)
    write_report_json(out / "report.json", records)
    write_snapshot(out, config, "evaluate", {
        "estimates": str(est_root), "dataset": str(args.dataset),
        "split": args.split,
    })
    overall = aggregate(records, "overall")[0]
    def show(x):
        return "n/a" if x is None else f"{x:.2f}"
    print(f"evaluated {len(pieces)} piece(s), {overall.count} scored slot(s), "
          f"{overall.absent_count} absent: mean SDR {show(overall.mean_sdr_db)} dB, "
          f"SIR {show(overall.mean_sir_db)} dB, SAR {show(overall.mean_sar_db)} dB")
    return 0


def cmd_baseline_train(args) -> int:
    config = load_run_config(args.config)
    manifest = load_manifest(args.dataset)
    bp = config.baseline
    notes = {}
    for name in manifest.vocabulary:
        spec = INSTRUMENTS.get(name)
        if spec is None:
            raise DataError(f"no instrument definition for {name!r}")
        lo, hi = spec.pitch_range
        pitches = np.unique(np.linspace(lo, hi, bp.notes_per_instrument).round().astype(int))
        notes[name] = [
            synth_note(spec, int(p), bp.note_duration_s, manifest.sample_rate)
            for p in pitches
        ]
    bank = learn_templates(notes, rank=bp.rank, iterations=bp.iterations,
                           window=bp.window, seed=bp.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bank.save(out)
    write_snapshot(out.parent, config, "baseline-train", {
        "dataset": str(args.dataset), "out": str(out),
    })
    print(f"learned {bp.rank} templates for {len(notes)} instrument(s) -> {out}")
    return 0


def cmd_baseline(args) -> int:
    config = load_run_config(args.config)
    manifest = load_manifest(args.dataset)
    bank = TemplateBank.load(args.bank)
    bp = config.baseline
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pieces = manifest.by_split(args.split)
    for entry in pieces:
        ex = load_example(manifest, entry.piece_id)
        separated = separate_nmf(ex.mix, bank, entry.instruments,
                                 iterations=bp.iterations, seed=bp.seed)
        piece_dir = out / entry.piece_id
        piece_dir.mkdir(parents=True, exist_ok=True)
        for name, track in separated.items():
            write_wav(track, piece_dir / f"{name}.wav", encoding="float64")
    write_snapshot(out, config, "baseline", {
        "bank": str(args.bank), "dataset": str(args.dataset), "split": args.split,
    })
    print(f"baseline separated {len(pieces)} piece(s) into {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavesep",
        description="Waveform source separation: data, training, separation, "
                    "metrics, and an NMF baseline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic ensemble dataset")
    p.add_argument("--config", default=None, help="JSON run configuration")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--force", action="store_true",
                   help="write into a non-empty output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the separation network")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--conditioning", choices=["on", "off"], default=None,
                   help="override label conditioning from the config")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate a mix with a trained checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default=None, help="a single mixture WAV")
    p.add_argument("--dataset", default=None, help="separate a dataset split instead")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--labels", default=None,
                   help="comma-separated active instruments (conditioned models)")
    p.add_argument("--threshold-db", type=float, default=-40.0,
                   help="active-slot RMS threshold in dBFS")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="score estimates against references")
    p.add_argument("--config", default=None)
    p.add_argument("--estimates", required=True, help="directory of per-piece estimates")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline-train", help="learn NMF timbre templates")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="template bank file (.tensors)")
    p.set_defaults(func=cmd_baseline_train)

    p = sub.add_parser("baseline", help="NMF-separate a dataset split")
    p.add_argument("--config", default=None)
    p.add_argument("--bank", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except WavesepError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return EXIT_CODES.get(e.category, 1)
    except OSError as e:
        print(f"error[data]: {e}", file=sys.stderr)
        return EXIT_CODES["data"]


if __name__ == "__main__":
    sys.exit(main())
