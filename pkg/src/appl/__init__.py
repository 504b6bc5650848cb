"""Adaptive parametric prototype learning for cross-domain few-shot classification."""

from .config import RunConfig, parse_config
from .exceptions import (APPLError, CheckpointError, ConfigError, DimensionError, FormatError,
                         NumericError)

__version__ = "0.1.0"

__all__ = [
    "APPLClassifier",
    "APPLError",
    "CheckpointError",
    "ConfigError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "RunConfig",
    "parse_config",
]


def __getattr__(name):
    # keep scikit-learn off the import path unless the estimator is used
    if name == "APPLClassifier":
        from .estimator import APPLClassifier
        return APPLClassifier
    raise AttributeError(f"module 'appl' has no attribute {name!r}")
