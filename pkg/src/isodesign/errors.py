"""Exception types raised across the package."""

from __future__ import annotations


class IsodesignError(Exception):
    """Base class for all package errors."""


class ParseError(IsodesignError):
    """Malformed expression source.

    Attributes
    ----------
    position : int
        Zero-based character offset of the offending token.
    expected : str
        Human readable description of what the parser wanted.
    """

    def __init__(self, message: str, position: int, expected: str = ""):
        self.position = position
        self.expected = expected
        detail = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at position {position}{detail}")


class UnknownVariable(ParseError):
    pass


class UnknownFunction(ParseError):
    pass


class DomainError(IsodesignError, ValueError):
    """Expression evaluated outside its domain (log/sqrt of nonpositive, 1/0)."""

    def __init__(self, message: str, point=None):
        self.point = point
        where = "" if point is None else f" at x={_fmt_point(point)}"
        super().__init__(message + where)


class NotSPD(IsodesignError, ValueError):
    def __init__(self, point=None, min_eig: float | None = None):
        self.point = point
        self.min_eig = min_eig
        msg = "metric is not positive definite"
        if min_eig is not None:
            msg += f" (min eigenvalue {min_eig:.3e})"
        if point is not None:
            msg += f" at x={_fmt_point(point)}"
        super().__init__(msg)


class NotConformalTarget(IsodesignError, ValueError):
    pass


class SingularFrame(IsodesignError, ValueError):
    def __init__(self, message: str = "frame is singular", point=None):
        self.point = point
        where = "" if point is None else f" at x={_fmt_point(point)}"
        super().__init__(message + where)


class StepFailure(IsodesignError, ArithmeticError):
    pass


class NonFinite(IsodesignError, ArithmeticError):
    pass


class DegenerateSurface(IsodesignError, ValueError):
    pass


class ValidationError(IsodesignError, ValueError):
    """Problem file failed validation; carries file/line context when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)


def _fmt_point(point) -> str:
    try:
        return "(" + ", ".join(f"{float(v):.6g}" for v in point) + ")"
    except TypeError:
        return str(point)
