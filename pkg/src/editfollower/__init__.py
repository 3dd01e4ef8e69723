"""Courtesy-conditioned car-following models.

Submodules: ``trajectory`` (event I/O, extraction, splits), ``courtesy``
(discourtesy metrics), ``autodiff`` (reverse-mode tape), ``models``,
``rollout``, ``training``, ``evaluation``, ``synthcorpus`` and ``cli``.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError, DataError, DegenerateInputError, DivergenceError, EditFollowerError,
    NonFiniteError, NumericalError, SchemaError, ShapeError,
)

__all__ = [
    "__version__", "ConfigError", "DataError", "DegenerateInputError", "DivergenceError",
    "EditFollowerError", "NonFiniteError", "NumericalError", "SchemaError", "ShapeError",
]
