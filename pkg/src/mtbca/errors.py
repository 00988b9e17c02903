"""Exception hierarchy shared across the package."""


class MTBCAError(Exception):
    """Base class for all package errors."""


class DimensionError(MTBCAError, ValueError):
    pass


class NumericError(MTBCAError, FloatingPointError):
    pass


class DegenerateBatchError(MTBCAError, ValueError):
    pass


class OptimizerError(MTBCAError, RuntimeError):
    pass


class ConfigError(MTBCAError, ValueError):
    pass


class DataError(MTBCAError, ValueError):
    pass


class UsageError(MTBCAError, RuntimeError):
    pass


class WavParseError(MTBCAError, ValueError):
    """Malformed or unsupported WAV content; ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CheckpointError(MTBCAError, IOError):
    """Checkpoint could not be decoded; ``field`` names the failing entry."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class CacheError(MTBCAError, IOError):
    pass


class TrainingError(MTBCAError, RuntimeError):
    pass
