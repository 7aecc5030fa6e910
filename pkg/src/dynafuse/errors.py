"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see cli.EXIT_CODES): configuration
problems exit 2, numeric failures exit 3, I/O failures exit 4.
"""


class DynafuseError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DynafuseError, ValueError):
    """A caller passed an argument outside an operation's domain."""


class ValidationError(DynafuseError, ValueError):
    """Input data violates a structural invariant (shape, finiteness, overlap)."""


class ConfigurationError(DynafuseError, ValueError):
    """A config value or combination of values is not allowed.

    `key_path` points at the offending entry when known (e.g. "denoiser.tap").
    """

    def __init__(self, message: str, key_path: str | None = None):
        super().__init__(message if key_path is None else f"{key_path}: {message}")
        self.key_path = key_path


class NumericError(DynafuseError, ArithmeticError):
    """A computation produced non-finite values.

    `context` names the offending unit: a frame index for encoder outputs,
    a parameter name for gradients, a step index for training losses.
    """

    def __init__(self, message: str, context=None):
        super().__init__(message if context is None else f"{message} ({context})")
        self.context = context


class InvalidSampleError(DynafuseError, ValueError):
    """A task sample is unusable for the requested operation (e.g. empty answer)."""


class CheckpointError(DynafuseError, IOError):
    """A checkpoint file is missing, corrupt, or of an incompatible version."""


class DataIOError(DynafuseError, IOError):
    """A data file (image, dataset, report) could not be read or written."""
