"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class SingularSystemError(ValueError):
    """A least-squares system is numerically rank deficient."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ConfigurationError(ValueError):
    """Invalid dimensions, grids or configuration keys."""


class UndefinedMetricError(ValueError):
    pass


class DomainError(ValueError):
    pass


class CombinatorialLimitError(RuntimeError):
    """Exhaustive search would exceed the subset budget."""


class TrainingDivergedError(FloatingPointError):
    pass


class ModelFormatError(ValueError):
    """Base class for model-file load failures."""


class BadMagicError(ModelFormatError):
    pass


class CrcMismatchError(ModelFormatError):
    pass


class TruncatedStreamError(ModelFormatError):
    pass


class ImageFormatError(ValueError):
    """Base class for IDX / PGM parse failures."""


class IdxMagicError(ImageFormatError):
    pass


class IdxTypeError(ImageFormatError):
    pass


class IdxRankError(ImageFormatError):
    pass


class IdxTruncatedError(ImageFormatError):
    pass


class PgmFormatError(ImageFormatError):
    pass


class PgmMaxvalError(ImageFormatError):
    pass
