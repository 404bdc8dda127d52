"""Exception types shared across the package."""


class SeqdiffError(Exception):
    """Base class for all package errors."""


class ContractError(SeqdiffError):
    """An operation was called outside its documented preconditions."""


class ConfigError(SeqdiffError):
    """Invalid configuration value or unknown configuration key."""


class MatrixError(SeqdiffError):
    """A scheduling matrix failed validation."""


class DataError(SeqdiffError):
    """Malformed input data (CSV parse errors carry a line number)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(SeqdiffError):
    """Corrupt checkpoint file or incompatible format version."""


class GenerationError(SeqdiffError):
    """Synthetic data generation could not satisfy its contract."""


class DivergenceError(SeqdiffError):
    """Non-finite values encountered at runtime; carries context."""
