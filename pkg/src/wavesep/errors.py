"""Exception hierarchy shared across the package.

Every error raised by wavesep carries a ``category`` used by the CLI to
pick an exit code: config (2), data (3), model (4).
"""


class WavesepError(Exception):
    category = "internal"


class ConfigError(WavesepError):
    category = "config"


class DataError(WavesepError):
    category = "data"


class ModelError(WavesepError):
    category = "model"


class ShapeError(ModelError):
    """Tensor shapes incompatible with the requested operation."""


class WavFormatError(DataError):
    """Malformed or unsupported WAV file."""


class TrainingDiverged(ModelError):
    """Loss became non-finite; carries the step and batch where it happened."""

    def __init__(self, step: int, batch_id: int):
        self.step = step
        self.batch_id = batch_id
        super().__init__(f"non-finite loss at step {step} (batch {batch_id})")
