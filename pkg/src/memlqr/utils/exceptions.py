from typing import Optional, Sequence

import asyncclick as click

from .logger import handle_traceback


class MemlqrError(Exception):
    """Base exception with traceback logging, a concise error line and an exit code."""

    default_message = "An error occurred"
    exit_code = 3

    def __init__(self, message: str = None, **kwargs):
        self.message = message or self.default_message
        self.details = kwargs
        self.message = self.format_message()
        super().__init__(self.message)
        self.log_traceback()
        self.display_message()

    def log_traceback(self):
        """Log the traceback of the exception. See :meth:`~memlqr.utils.logger.handle_traceback`."""
        handle_traceback(self)

    def display_message(self):
        """Display the error message to the console."""
        click.echo(click.style(f"\nError: {self.message}", fg="red", bold=True), err=True)

    def format_message(self) -> str:
        """Format exception message properly."""
        details = " - ".join(
            f"{key}: {value}" for key, value in self.details.items() if value is not None
        )
        if details:
            return f"{self.message} - {details}"
        return self.message

    def __str__(self):
        return self.message


class ProblemParseError(MemlqrError):
    """Raised when a problem file is missing or is not well-formed JSON."""

    default_message = "Unable to parse problem file"
    exit_code = 1

    def __init__(self, path: Optional[str] = None, reason: Optional[str] = None):
        super().__init__(path=path, reason=reason)


class ProblemValidationError(MemlqrError):
    """Raised when a problem instance violates one of its invariants."""

    default_message = "Problem validation failed"
    exit_code = 2

    def __init__(self, invariant: Optional[str] = None, reason: Optional[str] = None):
        super().__init__(invariant=invariant, reason=reason)


class DimensionMismatchError(ProblemValidationError):
    """Raised when matrix, vector or table shapes disagree with the declared dimensions."""

    default_message = "Dimension mismatch"

    def __init__(self, field: Optional[str] = None, expected=None, received=None):
        MemlqrError.__init__(self, field=field, expected=expected, received=received)


class GridError(ProblemValidationError):
    """Raised when a time, node index or grid size is incompatible with the time grid."""

    default_message = "Grid incompatibility"

    def __init__(self, reason: Optional[str] = None):
        MemlqrError.__init__(self, reason=reason)


class NumericalError(MemlqrError):
    """Raised when a numerical routine fails."""

    default_message = "Numerical failure"

    def __init__(self, reason: Optional[str] = None, node: Optional[int] = None):
        super().__init__(reason=reason, node=node)


class SemigroupOverflowError(NumericalError):
    """Raised when the sampled semigroup leaves the floating point range."""

    default_message = "Semigroup overflow"


class FactorizationError(NumericalError):
    """Raised when the normal equations of the open-loop problem cannot be factorized."""

    default_message = "Factorization of the control-space system failed"

    def __init__(self, reason: Optional[str] = None, condition: Optional[float] = None):
        MemlqrError.__init__(self, reason=reason, condition=condition)


class RiccatiBlowUpError(NumericalError):
    """Raised when the backward Riccati march produces nonfinite values."""

    default_message = "Riccati integration blew up"


class SimulationError(NumericalError):
    """Raised when time stepping of the state equation fails or leaves the finite range."""

    default_message = "State simulation failed"


class VerificationError(MemlqrError):
    """Raised when one or more verification rows fail."""

    default_message = "Verification failed"

    def __init__(self, failed: Optional[Sequence[str]] = None):
        super().__init__(failed=", ".join(failed) if failed else None)


class ExportError(MemlqrError):
    """Raised when encountering error(s) exporting data to files."""

    default_message = "Error exporting data"

    def __init__(self, file_path: Optional[str] = None):
        super().__init__(file_path=file_path)
