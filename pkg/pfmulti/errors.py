"""Exception hierarchy for the power-flow multi-solution engine."""


class PfMultiError(Exception):
    """Base class of every error raised by the package."""


class CaseParseError(PfMultiError, ValueError):
    """Malformed case file content."""

    def __init__(self, message: str, line: int | None = None) -> None:
        """Initialize the error.

        Args:
            message: Human readable description.
            line: 1-based line number of the offending content, if known.
        """
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CaseValidationError(PfMultiError, ValueError):
    """Case data parsed but violates a network invariant."""


class ConfigError(PfMultiError, ValueError):
    """Invalid run configuration."""

    def __init__(self, message: str, line: int | None = None) -> None:
        """Initialize the error.

        Args:
            message: Human readable description.
            line: 1-based line number in the config file, if known.
        """
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PreconditionError(PfMultiError, ValueError):
    """An operation was called outside of its contract."""


class DecompositionError(PfMultiError):
    """A continuum pattern cannot be exploited on this case."""


class CurveAssemblyError(PfMultiError):
    """An assembled curve sample failed its residual check."""

    def __init__(self, message: str, theta: float, residual: float) -> None:
        """Initialize the error.

        Args:
            message: Human readable description.
            theta: Free angle of the failing sample, radians.
            residual: Infinity norm of the failing residual vector.
        """
        self.theta = theta
        self.residual = residual
        super().__init__(
            f"{message} (theta={theta:.6g} rad, residual={residual:.3e})"
        )
