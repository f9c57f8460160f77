"""Exception types shared across the package.

The CLI maps these onto stable exit codes: I/O problems exit 2, numerical
aborts exit 3, schema/compatibility problems exit 4.
"""


class SpdnetError(Exception):
    """Base class for all package errors."""


class ConfigError(SpdnetError):
    """Invalid, unknown, or inconsistent configuration values."""


class ShapeError(SpdnetError):
    """Arrays with incompatible shapes where identical shapes are required."""


class UnlabeledCaseError(SpdnetError):
    """A case directory holds no ground-truth volume (or no volumes at all)."""


class ClassCountError(SpdnetError):
    """Dataset and model disagree on the number of classes."""


class SchemaError(SpdnetError):
    """A manifest, report, or config file does not match the expected schema."""


class CheckpointError(SpdnetError):
    """Unreadable or corrupt checkpoint container."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


class MissingComponentError(CheckpointError):
    """Checkpoint lacks weights for a component the current config requires."""


class NumericalAbort(SpdnetError):
    """A non-finite loss was produced; training cannot continue."""

    def __init__(self, message: str, last_checkpoint: str | None = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
