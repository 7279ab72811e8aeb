"""Exception types shared across the package."""


class SvqError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SvqError):
    """Invalid configuration, shape mismatch, or bad hyperparameter."""


class DataError(SvqError):
    """Malformed sample data: out-of-range class ids, bad token layout."""


class NumericError(SvqError):
    """Non-finite values where finite ones are required."""


class FormatError(SvqError):
    """Malformed serialized bytes (PPM/PGM/checkpoint); carries an offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDiverged(SvqError):
    """Loss became non-finite during training."""

    def __init__(self, step, last_parts):
        super().__init__(
            f"non-finite loss at step {step}; last finite parts: {last_parts}"
        )
        self.step = step
        self.last_parts = last_parts
