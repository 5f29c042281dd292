"""Exception types shared across the toolkit."""


class LowlightError(Exception):
    """Base class for all toolkit errors."""


class NotFoundError(LowlightError):
    """A required file or directory does not exist."""


class DecodeError(LowlightError):
    """Bytes could not be decoded as an image."""


class InvalidInputError(LowlightError):
    """An argument violates a documented precondition."""


class ImageWriteError(LowlightError):
    """An image could not be written to disk."""


class ShapeError(LowlightError):
    """Tensor shapes are incompatible with the operation."""


class DependencyError(LowlightError):
    """An optional dependency (pretrained extractor, metric params) is unavailable."""


class NumericalError(LowlightError):
    """A non-finite value appeared during optimization.

    Carries the name of the offending loss term when known.
    """

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class CheckpointError(LowlightError):
    """A checkpoint is missing, corrupt, or incompatible with this code."""


class PairingError(LowlightError):
    """Enhanced/reference directories could not be paired by filename.

    Carries the list of offending filenames.
    """

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class ConfigError(LowlightError):
    """A run config file or override could not be parsed."""
