"""Two-stage surgical workflow understanding: a short-range video-language
model feeding long-range temporal segmentation, with corpus tooling,
evaluation metrics, and a command-line harness."""

__version__ = "0.1.0"

from .errors import (ConfigError, DimensionError, InputError, NumericError,
                     StateError, SurgflowError, VocabError)

__all__ = [
    "__version__",
    "SurgflowError", "DimensionError", "ConfigError", "InputError",
    "VocabError", "StateError", "NumericError",
]
