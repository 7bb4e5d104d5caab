"""Multilingual NMT with language-aware layers and random online backtranslation."""

from .errors import (CheckpointError, ConfigError, DimensionError, EvaluationError, LanguageError,
                     NMTError, NonFiniteError, SequenceError, UsageError)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "DimensionError", "EvaluationError", "LanguageError",
    "NMTError", "NonFiniteError", "SequenceError", "UsageError", "__version__",
]
