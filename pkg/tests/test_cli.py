"""End-to-end command-line flows on a miniature corpus."""

import json
from pathlib import Path

import numpy as np
import pytest

from wavesep.audio import AudioTrack, write_wav
from wavesep.checkpoint import load_model
from wavesep.cli import main
from wavesep.config import load_run_config
from wavesep.errors import ConfigError
from wavesep.model import ModelConfig, WaveUNet
from wavesep.synth import QUARTET_VOCABULARY

SMALL_CONFIG = {
    "dataset": {
        "vocabulary": list(QUARTET_VOCABULARY),
        "num_pieces": 4,
        "ensemble_sizes": [2],
        "seed": 11,
        "duration_range": [1.0, 1.5],
    },
    "model": {
        "num_sources": 4,
        "depth": 2,
        "base_filters": 4,
        "filter_growth": 4,
        "kernel_down": 5,
        "kernel_up": 3,
    },
    "train": {
        "lr": 1e-3,
        "batch_size": 2,
        "max_steps": 6,
        "seed": 0,
        "segment_length": 256,
        "validation_interval": 3,
    },
    "metrics": {"segment_seconds": 0.5},
    "baseline": {"rank": 2, "iterations": 20, "notes_per_instrument": 3},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cliws")
    cfg = ws / "config.json"
    cfg.write_text(json.dumps(SMALL_CONFIG))
    data = ws / "data"
    assert main(["generate", "--config", str(cfg), "--out", str(data)]) == 0
    return ws


def _cfg(ws):
    return str(ws / "config.json")


def test_generate_snapshot_and_refusal(workspace, capsys):
    data = workspace / "data"
    assert (data / "manifest.json").is_file()
    assert (data / "resolved_config.json").is_file()
    snap = json.loads((data / "resolved_config.json").read_text())
    assert snap["command"] == "generate"
    assert snap["dataset"]["num_pieces"] == 4
    # refuses to clobber without --force
    assert main(["generate", "--config", _cfg(workspace), "--out", str(data)]) == 3
    err = capsys.readouterr().err
    assert err.startswith("error[data]:")


def test_generate_rerun_identical_manifest(workspace, tmp_path):
    again = tmp_path / "data2"
    assert main(["generate", "--config", _cfg(workspace), "--out", str(again)]) == 0
    a = (workspace / "data" / "manifest.json").read_text()
    b = (again / "manifest.json").read_text()
    assert a == b


def test_unknown_config_key_rejected(tmp_path, capsys):
    bad = dict(SMALL_CONFIG)
    bad = json.loads(json.dumps(SMALL_CONFIG))
    bad["train"]["learning_rate"] = 1e-3  # wrong name
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert main(["generate", "--config", str(p), "--out", str(tmp_path / "d")]) == 2
    assert "train.learning_rate" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        load_run_config(p)


def test_conditioning_flag_changes_only_gate_params(workspace):
    cfg = load_run_config(_cfg(workspace))
    off = WaveUNet(cfg.model, QUARTET_VOCABULARY, seed=0)
    on_cfg = load_run_config(
        _cfg(workspace), {"model": {"conditioning_enabled": True}}
    )
    on = WaveUNet(on_cfg.model, QUARTET_VOCABULARY, seed=0)
    c = cfg.model.bottleneck_channels
    k = cfg.model.num_sources
    assert on.parameter_count() - off.parameter_count() == c * k + c
    extra = set(on.params) - set(off.params)
    assert extra == {"cond.weight", "cond.bias"}


@pytest.fixture(scope="module")
def trained(workspace):
    run = workspace / "run-exp"
    rc = main(["train", "--config", _cfg(workspace),
               "--dataset", str(workspace / "data"), "--out", str(run),
               "--conditioning", "off"])
    assert rc == 0
    ckpts = sorted(run.glob("step*.tensors"))
    assert ckpts
    return run, ckpts[-1]


def test_train_outputs(trained):
    run, ckpt = trained
    assert (run / "loss.csv").is_file()
    assert (run / "resolved_config.json").is_file()
    lines = (run / "loss.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + SMALL_CONFIG["train"]["max_steps"]
    model, info, _ = load_model(ckpt)
    assert info.step == SMALL_CONFIG["train"]["max_steps"]
    assert not model.config.conditioning_enabled


def test_train_loss_log_deterministic(workspace, trained, tmp_path):
    run, _ = trained
    rerun = tmp_path / "rerun"
    assert main(["train", "--config", _cfg(workspace),
                 "--dataset", str(workspace / "data"), "--out", str(rerun),
                 "--conditioning", "off"]) == 0
    assert (run / "loss.csv").read_text() == (rerun / "loss.csv").read_text()


def test_resume_continues_numbering(workspace, trained, tmp_path):
    _, ckpt = trained
    out = tmp_path / "resumed"
    assert main(["train", "--config", _cfg(workspace),
                 "--dataset", str(workspace / "data"), "--out", str(out),
                 "--conditioning", "off", "--resume", str(ckpt)]) == 0
    steps = [int(p.name[4:-8]) for p in out.glob("step*.tensors")]
    assert max(steps) == 2 * SMALL_CONFIG["train"]["max_steps"]


def test_missing_dataset_is_data_error(workspace, capsys):
    rc = main(["train", "--config", _cfg(workspace),
               "--dataset", "/nonexistent/dir", "--out", "/tmp/x"])
    assert rc == 3
    assert "error[data]" in capsys.readouterr().err


def test_separate_batch_evaluate_flow(workspace, trained, capsys):
    _, ckpt = trained
    est = workspace / "est"
    rc = main(["separate", "--config", _cfg(workspace), "--checkpoint", str(ckpt),
               "--dataset", str(workspace / "data"), "--split", "test",
               "--out", str(est)])
    assert rc == 0
    report = json.loads((est / "active_slots.json").read_text())
    assert report  # one entry per test piece
    for piece_report in report.values():
        assert len(piece_report["slots"]) == 4

    out = workspace / "eval"
    rc = main(["evaluate", "--config", _cfg(workspace), "--estimates", str(est),
               "--dataset", str(workspace / "data"), "--split", "test",
               "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["records"]
    assert "overall" in doc["aggregates"]
    by_n = doc["aggregates"]["n_active"]
    assert [row["group"] for row in by_n] == ["2"]  # duet-only corpus


def test_evaluate_perfect_estimates_hit_caps(workspace, tmp_path, capsys):
    # copy the references as the estimates: every active slot at +100 dB
    from wavesep.dataset import load_example, load_manifest
    manifest = load_manifest(workspace / "data")
    est = tmp_path / "perfect"
    for entry in manifest.by_split("test"):
        ex = load_example(manifest, entry.piece_id)
        d = est / entry.piece_id
        d.mkdir(parents=True)
        for slot, name in enumerate(manifest.vocabulary):
            write_wav(ex.sources[slot], d / f"{name}.wav", encoding="float64")
    out = tmp_path / "report"
    assert main(["evaluate", "--config", _cfg(workspace), "--estimates", str(est),
                 "--dataset", str(workspace / "data"), "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    present = [r for r in doc["records"] if r["sdr_db"] is not None]
    absent = [r for r in doc["records"] if r["sdr_db"] is None]
    assert present and absent
    assert all(r["sdr_db"] == 100.0 for r in present)
    assert all(r["est_rms_dbfs"] == -300.0 for r in absent)


def test_conditioned_checkpoint_requires_labels(workspace, tmp_path, capsys):
    run = tmp_path / "run-cexp"
    assert main(["train", "--config", _cfg(workspace),
                 "--dataset", str(workspace / "data"), "--out", str(run),
                 "--conditioning", "on"]) == 0
    ckpt = sorted(run.glob("step*.tensors"))[-1]
    mix = tmp_path / "mix.wav"
    rng = np.random.default_rng(0)
    write_wav(AudioTrack(np.clip(rng.normal(scale=0.1, size=4000), -1, 1), 8000), mix)
    rc = main(["separate", "--checkpoint", str(ckpt), "--input", str(mix),
               "--out", str(tmp_path / "sep")])
    assert rc == 4
    assert "labels" in capsys.readouterr().err
    # with labels it runs
    rc = main(["separate", "--checkpoint", str(ckpt), "--input", str(mix),
               "--labels", "bass,flute", "--out", str(tmp_path / "sep2")])
    assert rc == 0


def test_unconditioned_ignores_labels_with_warning(workspace, trained, tmp_path, capsys):
    _, ckpt = trained
    mix = tmp_path / "mix.wav"
    write_wav(AudioTrack(np.zeros(4000), 8000), mix)
    rc = main(["separate", "--checkpoint", str(ckpt), "--input", str(mix),
               "--labels", "bass", "--out", str(tmp_path / "sep")])
    assert rc == 0
    assert "ignored" in capsys.readouterr().err


def test_silent_input_has_no_active_slots(workspace, trained, tmp_path):
    _, ckpt = trained
    mix = tmp_path / "silence.wav"
    write_wav(AudioTrack(np.zeros(4000), 8000), mix)
    out = tmp_path / "sep"
    assert main(["separate", "--checkpoint", str(ckpt), "--input", str(mix),
                 "--out", str(out)]) == 0
    report = json.loads((out / "active_slots.json").read_text())
    assert all(not s["active"] for s in report["input"]["slots"])


def test_baseline_flow_into_evaluate(workspace, tmp_path):
    bank = tmp_path / "bank.tensors"
    assert main(["baseline-train", "--config", _cfg(workspace),
                 "--dataset", str(workspace / "data"), "--out", str(bank)]) == 0
    est = tmp_path / "nmf-est"
    assert main(["baseline", "--config", _cfg(workspace), "--bank", str(bank),
                 "--dataset", str(workspace / "data"), "--split", "test",
                 "--out", str(est)]) == 0
    out = tmp_path / "nmf-eval"
    assert main(["evaluate", "--config", _cfg(workspace), "--estimates", str(est),
                 "--dataset", str(workspace / "data"), "--split", "test",
                 "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["aggregates"]["overall"][0]["count"] > 0
