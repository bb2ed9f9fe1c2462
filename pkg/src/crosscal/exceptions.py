"""Exception types shared across the toolkit.

Validation failures (bad shapes, bad values, ill-conditioned inputs) map to
CLI exit code 1; file parsing and I/O failures map to exit code 2.
"""


class CalibrationError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(CalibrationError, ValueError):
    """An array argument has the wrong shape or an inconsistent size."""


class TooFewPoints(CalibrationError, ValueError):
    """A sampling or grouping request exceeds the number of available points."""


class EmptyInput(CalibrationError, ValueError):
    """An operation received an empty point cloud or token sequence."""


class AngleNearPi(CalibrationError, ArithmeticError):
    """Rotation angle is within tolerance of pi, where the matrix log is
    ill-conditioned."""


class GimbalLock(CalibrationError, ArithmeticError):
    """Pitch is within tolerance of +-pi/2, where Euler extraction is
    degenerate."""


class ConfigError(CalibrationError, ValueError):
    """A run configuration contains an unknown key or an out-of-range value.

    The offending key is stored in ``key``.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class ParseError(CalibrationError, ValueError):
    """A data file could not be parsed.

    ``line`` is the 1-based line number where parsing failed, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
