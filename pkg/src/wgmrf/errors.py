"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError -> 2,
NumericError -> 3, ResourceLimitError -> 4.
"""


class WgmrfError(Exception):
    """Base class for all package errors."""


class ValidationError(WgmrfError, ValueError):
    """Invalid argument, malformed input file, or violated precondition."""


class ParseError(ValidationError):
    """Malformed text input; carries a line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class OutOfDomainError(ValidationError):
    """A location falls outside the mesh."""


class NumericError(WgmrfError, ArithmeticError):
    """Numerical failure (non-finite state, failed factorization, ...)."""


class NotSpdError(NumericError):
    """Cholesky hit a non-positive pivot; ``index`` is the failing column."""

    def __init__(self, index, value=None):
        self.index = int(index)
        self.value = value
        detail = f" (pivot {value:.6g})" if value is not None else ""
        super().__init__(f"matrix is not positive definite at index {self.index}{detail}")


class DegenerateDirectionError(NumericError):
    """Mean direction undefined: zero resultant vector."""


class DegenerateConcentrationError(NumericError):
    """Sample concentration is zero; the circular variance estimate diverges."""


class ResourceLimitError(WgmrfError):
    """A configured size or budget limit was exceeded."""
