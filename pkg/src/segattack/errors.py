"""Exception types shared across the package."""


class SegattackError(Exception):
    """Base class for all package errors."""


class ValidationError(SegattackError, ValueError):
    """Bad arguments, shapes, labels, or configuration values."""


class DataFormatError(ValidationError):
    """Malformed or truncated file content (PPM/PGM/tensor/model files)."""


class StageError(SegattackError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
