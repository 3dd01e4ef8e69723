"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage problems exit 1, data and
validation problems exit 2, numerical failures exit 3.
"""
from __future__ import annotations


class EditFollowerError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class SchemaError(EditFollowerError):
    """A required CSV column could not be resolved."""


class DataError(EditFollowerError):
    """Input data violates a documented invariant (negative spacing, ...)."""


class DegenerateInputError(DataError):
    """A statistic is undefined for the given input (e.g. all-zero speeds)."""


class ConfigError(EditFollowerError):
    """Invalid configuration value or unknown architecture name."""


class ShapeError(EditFollowerError):
    """Operand shapes are incompatible for a tensor operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class NumericalError(EditFollowerError):
    """Base class for numerical failures (exit code 3)."""

    exit_code = 3


class NonFiniteError(NumericalError):
    """A tensor operation produced NaN or inf."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite value produced by op '{op}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DivergenceError(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        msg = f"training diverged at epoch {epoch}, batch {batch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
