"""Exception types shared across the package."""


class NetexpError(Exception):
    """Base class for all package errors."""


class GraphFormatError(NetexpError):
    """Malformed graph or cluster file; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DesignError(NetexpError):
    """Invalid design parameters or a design/graph mismatch."""


class ConditionalDrawError(NetexpError):
    """Conditional draw failed: inconsistent constraints or budget exhausted."""


class DslError(NetexpError):
    """Assignment program error; carries source position when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        if line is not None:
            pos = f"line {line}" + (f", col {col}" if col is not None else "")
            message = f"{pos}: {message}"
        super().__init__(message)
        self.line = line
        self.col = col


class DegenerateStatisticError(NetexpError):
    """Test statistic undefined on the observed data, or on most re-draws."""


class SimulationError(NetexpError):
    """Invalid simulation or calibration parameters."""
