"""
Exception hierarchy for privclust.

Every error raised on purpose by the library derives from `PrivclustError`,
which is itself a `ValueError` so callers that only catch `ValueError` keep
working.
"""

from typing import Optional


class PrivclustError(ValueError):
    """Base class for all library errors."""


class ConfigError(PrivclustError):
    """Invalid experiment configuration, share vector or missing input file."""


class ParseError(PrivclustError):
    """
    Raised when a CSV file cannot be turned into a Dataset.

    Attributes:
        row (Optional[int]): 1-based line of the file (the header is line 1)
            where parsing failed, if the failure is tied to a row.
    """

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ParameterError(PrivclustError):
    """A numeric parameter is outside its admissible range."""


class DomainError(PrivclustError):
    """A state code lies outside its feature's domain."""


class StateError(PrivclustError):
    """An object is not in the state an operation requires."""


class EstimationError(PrivclustError):
    """Frequency estimation is impossible for the given mechanism."""


class UndefinedMetricError(PrivclustError):
    """A validity index is undefined for the given assignment."""


class SelectionError(PrivclustError):
    """No candidate could be scored by the server."""


class ShareError(PrivclustError):
    """An owner would share no rows."""


class InputError(PrivclustError):
    """Inputs have mismatched lengths or dimensions."""


class EpsError(PrivclustError):
    """The k-distance curve is degenerate and yields no DBSCAN radius."""


class ProtocolError(PrivclustError):
    """
    Failure inside the collaborative protocol.

    Attributes:
        step (str): Name of the protocol step that failed.
    """

    def __init__(self, step: str, message: str):
        self.step = step
        super().__init__(f"[{step}] {message}")
