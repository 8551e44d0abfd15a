"""Exception types shared across the package.

Plain ValueError/OverflowError/OSError are used where Python already has the
right builtin; the classes here name failure modes that deserve a distinct
except-clause in callers or tests.
"""


class BpireError(Exception):
    """Base class for package-specific failures."""


class QuadratureFailure(BpireError):
    """Adaptive quadrature could not reach the requested absolute error
    within the bisection depth cap."""


class SeriesDivergence(BpireError):
    """A moment series failed its tail bound within the iteration cap.

    Not reachable for the supported offspring families (all moments finite);
    kept as a defensive guard.
    """


class NotSubcritical(BpireError):
    """Model fails the standing moment condition; long-run sampling refused."""


class PmfUnavailable(BpireError):
    """Exact kernel construction requested for a law without tractable pmf."""


class NoConvergence(BpireError):
    """Power iteration did not meet the sweep tolerance within max_iter."""


class ResidualTooLarge(BpireError):
    """Truncated enumeration leaves more probability mass than allowed."""


class ReferenceVanishes(BpireError):
    """Reference survival underflowed to zero at a requested grid point."""


class DegenerateOrderStats(BpireError):
    """Order statistics needed by an estimator are tied or non-positive."""


class ParseError(BpireError):
    """Config file could not be parsed; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(BpireError):
    """Config parsed but a field value is out of contract; names the field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
