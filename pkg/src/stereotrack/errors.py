"""Exception hierarchy.

Data errors (bad files, bad config) and numerical failures are kept apart so
the CLI can map them onto distinct exit codes.
"""

from __future__ import annotations


class StereoTrackError(Exception):
    """Base class for every error raised by this package."""


class DataError(StereoTrackError, ValueError):
    """Input that cannot be parsed or violates a documented invariant."""


class MotFormatError(DataError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CalibrationError(DataError):
    pass


class ConfigError(DataError):
    pass


class NumericalError(StereoTrackError, ArithmeticError):
    """A computation that is well-formed but numerically degenerate."""


class ConvergenceError(NumericalError):
    pass


class DegenerateGeometryError(NumericalError):
    pass


class PointAtInfinityError(NumericalError):
    pass
