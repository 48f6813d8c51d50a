"""Exception hierarchy.

Each family maps to a distinct CLI exit code: configuration problems exit
with 1, numerical/solver failures with 2, and file/format problems with 3.
"""


class LcsError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 2


class ConfigError(LcsError, ValueError):
    """Invalid parameters, grids, or run configuration."""

    exit_code = 1


class GridError(ConfigError):
    pass


class ParameterError(ConfigError):
    pass


class SolverError(LcsError, RuntimeError):
    exit_code = 2


class CflViolation(SolverError):
    """Requested step exceeds the CFL bound.

    ``required`` is the minimal number of equal substeps that would satisfy it.
    """

    def __init__(self, message: str, required: int):
        super().__init__(message)
        self.required = required


class UnboundedTimestep(SolverError):
    pass


class FormatError(LcsError, OSError):
    """Malformed or truncated file. ``offset`` is the byte offset, if known."""

    exit_code = 3

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MonotonicityError(FormatError):
    pass
