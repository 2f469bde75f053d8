"""Exception hierarchy shared across the package."""


class NCRegError(Exception):
    """Base class for package errors."""


class DegenerateGeometryError(NCRegError, ValueError):
    """A triangle or point configuration has (near) zero area."""


class MeshNotClosedError(NCRegError):
    """No face of the mesh contains a query direction."""


class FormatError(NCRegError, ValueError):
    """Malformed or truncated input file."""


class UnsupportedFormatError(FormatError):
    """Recognized but unsupported file variant (magic number, version)."""


class ShapeError(NCRegError, ValueError):
    """Array sizes disagree (vertex count, channel count)."""


class NumericFaultError(NCRegError, ArithmeticError):
    """A loss or parameter became non-finite."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DegenerateParameterError(NCRegError, ValueError):
    """Rotation parameters too close to a singular configuration."""


class UndefinedStatisticError(NCRegError, ValueError):
    """Correlation or regression undefined because of zero variance."""
