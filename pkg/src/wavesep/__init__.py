"""Desk-scale waveform source separation.

A label-conditioned Wave-U-Net trained on synthetic ensembles, with
silent-slot targets for absent instruments, projection-based SDR/SIR/SAR
metrics, and a timbre-informed NMF baseline. Everything runs on a plain
CPU with numpy as the only dependency.
"""

from .audio import AudioTrack, read_wav, rms, rms_dbfs, write_wav
from .checkpoint import CheckpointInfo, load_arrays, load_model, save_arrays, save_model
from .dataset import Manifest, generate_dataset, load_example, load_manifest, segment_examples
from .errors import (
    ConfigError,
    DataError,
    ModelError,
    ShapeError,
    TrainingDiverged,
    WavesepError,
    WavFormatError,
)
from .metrics import (
    MetricsRecord,
    aggregate,
    decompose,
    evaluate_slots,
    sdr_sir_sar,
)
from .model import (
    ModelConfig,
    ShapePlan,
    WaveUNet,
    condition_bottleneck,
    extract_active_sources,
    labels_from_names,
    make_training_target,
    plan_shapes,
    separate_track,
    simulate_shapes,
)
from .nmf import TemplateBank, fit_activations, kl_divergence, learn_templates, separate_nmf
from .optim import Adam
from .stft import Spectrogram, istft, stft
from .synth import (
    INSTRUMENTS,
    ORCHESTRA_VOCABULARY,
    QUARTET_VOCABULARY,
    EnsembleExample,
    InstrumentSpec,
    canonical_vocabulary,
    generate_piece,
    synth_note,
)
from .tensor import Tensor
from .train import TrainConfig, TrainResult, train, validate, write_loss_csv

__version__ = "0.1.0"
