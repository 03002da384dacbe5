"""Exception types shared across the package."""


class BeamixError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(BeamixError, ValueError):
    pass


class InvalidGeometryError(InvalidParameterError):
    pass


class OutOfBandError(InvalidParameterError):
    pass


class ShapeError(BeamixError, ValueError):
    pass


class TooShortError(ShapeError):
    pass


class NumericalFailureError(BeamixError, ArithmeticError):
    """A linear solve or factorization failed or produced non-finite output."""


class PoisonedGraphError(BeamixError, FloatingPointError):
    """NaN or Inf appeared in a forward or backward pass."""


class ContractError(BeamixError, RuntimeError):
    pass


class DegenerateSceneError(BeamixError, ValueError):
    pass


class UndefinedMetricError(BeamixError, ValueError):
    pass


class FormatError(BeamixError, ValueError):
    """A persisted file is missing, truncated or has an unexpected header."""
