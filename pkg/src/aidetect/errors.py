"""Exception hierarchy shared across the toolkit.

Every error a caller is expected to branch on has its own class; the service
layer maps these onto the wire (`error_kind`) and the CLI onto exit codes.
"""


class AidetectError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(AidetectError):
    """Shape or extent mismatch between tensors/layers."""


class StateError(AidetectError):
    """Operation needs state that is not there (e.g. backward before forward)."""


class ManifestError(AidetectError):
    """Dataset manifest failed to parse or validate."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class CacheFormatError(AidetectError):
    """Embedding cache has a bad magic/version/dim or otherwise violates the format."""


class CacheCorruptionError(CacheFormatError):
    """Embedding cache is truncated or has trailing garbage."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class HeadFormatError(AidetectError):
    """Trained-head file has a bad magic, kind, or tensor layout."""


class SplitError(AidetectError):
    """Requested data split is impossible (bad fraction, class too small)."""


class TrainingError(AidetectError):
    """Training run could not proceed."""


class NumericalError(TrainingError):
    """Loss became non-finite during training."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


class EncoderError(AidetectError):
    """Encoder model violated its contract (shapes, runtime failure)."""


class DecodeError(EncoderError):
    """Image bytes could not be decoded."""


class ConfigError(AidetectError):
    """Bad configuration: unknown keys, missing files, missing API keys."""


class TransportError(AidetectError):
    """Remote endpoint unreachable after exhausting retries."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts
