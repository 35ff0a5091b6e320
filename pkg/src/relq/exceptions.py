"""
The Exception Hierarchy:

Exception
 +-- RelqException
      +-- Error
          +-- InvalidInputError
          +-- ModelFileError
          +-- ModelValidationError
          +-- InternalConsistencyError
          +-- DivergenceError
          +-- RejectedSubsetError
          +-- RefusalError
               +-- NotControllableError
               +-- NoEquilibriumError
               +-- DefectiveMatrixError
               +-- ComplexSolutionError (also a RejectedSubsetError)
               +-- NonStabilizingError
               +-- SingularMultiplierBlockError
               +-- UnsupportedError
               +-- RepeatedTargetsError
               +-- IdentificationRefused
 +-- SettingsError (see relq.settings)

A RefusalError signals that the mathematics of the problem excludes an answer, e.g. the
instrument cannot reach every state. The command line maps refusals to exit code 2 and every
other Error to exit code 1.
"""

from __future__ import annotations

from typing import Any
from typing import List


class RelqException(Exception):
    """The base exception for all errors in relq."""

    pass


class Error(RelqException):
    """The base class for all relq Errors."""

    pass


class InvalidInputError(Error):
    """Raised when arguments are inconsistent, e.g. dimensions do not match."""

    pass


class ModelFileError(Error):
    """Raised when a model file can not be parsed."""

    def __init__(self, message: str, *, path=None, line: int = None, column: int = None, field: str = None):
        self.path = path
        self.line = line
        self.column = column
        self.field = field

        context = []
        if path is not None:
            context.append(str(path))
        if line is not None:
            context.append(f"line {line}")
        if column is not None:
            context.append(f"column {column}")
        if field is not None:
            context.append(f"field '{field}'")

        super().__init__(f"{', '.join(context)}: {message}" if context else message)


class ModelValidationError(Error):
    """Raised when a model violates one or more of its invariants. All violations are listed."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("Invalid model: " + "; ".join(self.violations))


class InternalConsistencyError(Error):
    """Raised when a post-solve verification fails, e.g. the first-order conditions do not hold."""

    pass


class DivergenceError(Error):
    """Raised when an iteration did not converge within the allowed number of steps."""

    def __init__(self, message: str, residual: float = None):
        self.residual = residual
        super().__init__(message)


class RejectedSubsetError(Error):
    """Raised when one choice of stable eigenvalues does not give an admissible saddle path."""

    def __init__(self, reason: str, subset=None):
        self.reason = reason
        self.subset = subset
        super().__init__(reason)


class RefusalError(Error):
    """The base class for mathematical refusals."""

    pass


class NotControllableError(RefusalError):
    """Raised when the controllability matrix is rank deficient. The report is attached."""

    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message)


class NoEquilibriumError(RefusalError):
    """Raised when there are fewer stable eigenvalues than predetermined variables."""

    pass


class DefectiveMatrixError(RefusalError):
    """Raised when a matrix has a repeated eigenvalue without a full set of eigenvectors."""

    def __init__(self, message: str, eigenvalue: complex = None):
        self.eigenvalue = eigenvalue
        super().__init__(message)


class ComplexSolutionError(RejectedSubsetError, RefusalError):
    """
    Raised when a saddle path would be complex, i.e. a stable set splits a complex conjugate
    pair. The equilibrium enumeration treats it as one more rejected subset.
    """

    pass


class NonStabilizingError(RefusalError):
    """Raised when a Riccati solution does not stabilize the closed loop."""

    pass


class SingularMultiplierBlockError(RefusalError):
    """Raised when the multiplier block P_mm can not be inverted."""

    pass


class UnsupportedError(RefusalError):
    """Raised when a construction is not available for the given dimensions or values."""

    pass


class RepeatedTargetsError(RefusalError):
    """Raised when pole placement targets are not distinct."""

    pass


class IdentificationRefused(RefusalError):
    """Raised when an identification experiment can not produce informative data."""

    pass
