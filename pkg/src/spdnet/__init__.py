"""Probabilistic adversarial segmentation of cardiac MRI."""

from .config import RunConfig, resolve_config
from .errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    MissingComponentError,
    NumericalAbort,
    SchemaError,
    ShapeError,
    SpdnetError,
    UnlabeledCaseError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "CheckpointVersionError",
    "ConfigError",
    "MissingComponentError",
    "NumericalAbort",
    "RunConfig",
    "SchemaError",
    "ShapeError",
    "SpdnetError",
    "UnlabeledCaseError",
    "__version__",
    "resolve_config",
]
