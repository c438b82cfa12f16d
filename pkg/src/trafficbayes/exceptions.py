"""Custom exceptions for the trafficbayes library."""

from typing import ClassVar


class TrafficBayesError(Exception):
    """Base exception for all trafficbayes errors."""

    exit_code: ClassVar[int] = 1


class ConfigurationError(TrafficBayesError):
    """Raised when a configuration file or value is invalid."""

    exit_code: ClassVar[int] = 2


class DataError(TrafficBayesError):
    """Raised when input data does not conform to the expected layout or schema."""

    exit_code: ClassVar[int] = 3


class InputFileError(DataError):
    """Raised when an input file is missing or unreadable."""

    def __init__(self, path: str) -> None:
        super().__init__(path)
        self.path = path

    def __str__(self) -> str:
        msg = f"Cannot read input file {self.path}"
        if self.__cause__ is not None:
            msg += f": {self.__cause__}"
        return msg


class SchemaViolationError(DataError):
    """Raised when a record does not conform to the covariate schema."""

    def __init__(self, record_id: str, group: str, detail: str = "") -> None:
        super().__init__(record_id, group, detail)
        self.record_id = record_id
        self.group = group
        self.detail = detail

    def __str__(self) -> str:
        msg = f"Record {self.record_id} violates schema in group {self.group}"
        if self.detail:
            msg += f": {self.detail}"
        return msg


class DomainError(TrafficBayesError, ValueError):
    """Raised when an argument lies outside the domain of an operation."""

    exit_code: ClassVar[int] = 3


class NumericalError(TrafficBayesError):
    """Raised when a numerical computation cannot produce a finite result."""

    exit_code: ClassVar[int] = 4


class UndefinedEstimateError(NumericalError):
    """Raised when Robbins' formula is evaluated at a count nobody observed."""

    def __init__(self, x: int) -> None:
        super().__init__(x)
        self.x = x

    def __str__(self) -> str:
        return f"Robbins estimate undefined at x={self.x}: no roads observed with exactly {self.x} fatalities"


class TruncationViolationError(NumericalError):
    """Raised when a zero count reaches the zero-truncated likelihood."""


class InitializationError(NumericalError):
    """Raised when a sampler chain cannot find a finite starting point."""


class DiagnosticError(NumericalError):
    """Raised when a convergence diagnostic is requested on unusable draws."""
