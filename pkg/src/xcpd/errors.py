"""Exception hierarchy shared by every module."""


class XcpdError(Exception):
    """Base class for all library errors."""


class DimensionError(XcpdError, ValueError):
    """Array shapes do not conform."""


class ConvergenceError(XcpdError, RuntimeError):
    """An iterative solver ran out of its sweep budget."""


class ConfigurationError(XcpdError, ValueError):
    """Invalid configuration value or combination of values."""


class UsageError(XcpdError, RuntimeError):
    """An object was used in a way its contract forbids."""


class IngestionError(XcpdError, ValueError):
    """A data file could not be parsed.

    ``row`` and ``column`` locate the offending cell (1-based file row,
    0-based column) when known.
    """

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column
