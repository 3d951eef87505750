"""Exception hierarchy for dashlab."""
from typing import Optional


class DashLabError(Exception):
    """Base class for all dashlab errors."""
    pass


class ParameterError(DashLabError, ValueError):
    """Argument outside its admissible range."""
    pass


class DivergenceError(ParameterError):
    """Closed-form quantity is singular or unbounded for the given inputs."""
    pass


class DatasetParseError(DashLabError):
    """CSV dataset could not be parsed.

    ``row`` is the 1-based data row (the header is row 0) and ``column`` the
    column name, when the failure can be pinned to a cell.
    """

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column!r}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
