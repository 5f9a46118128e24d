"""Exception hierarchy shared by every module."""


class GrounderError(Exception):
    """Base class for all package errors."""


class ValidationError(GrounderError, ValueError):
    """Bad input, bad configuration or malformed file."""


class SizingError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class FormatError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class ConflictError(ValidationError):
    pass


class EmptyQueryError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class NotFoundError(GrounderError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "not found"


class EvaluationError(GrounderError, ArithmeticError):
    """A function under evaluation produced a non-finite value."""


class TieError(GrounderError):
    """Top-T selection is tied at the evaluation point; jitter and retry."""


class TrainingDiverged(GrounderError, FloatingPointError):
    pass
