"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, SolverError and
InitializationError -> 3, FileFormatError (and OSError) -> 4.
"""


class ImuSynthError(Exception):
    """Base class for all package errors."""


class ConfigError(ImuSynthError):
    """Invalid configuration value, section, or parameter combination."""


class SolverError(ImuSynthError):
    """A numerical solve failed to converge or produced an invalid result."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        # optional iteration trace (objective values, istop codes, ...)
        self.trace = trace


class InitializationError(ImuSynthError):
    """Filter initialization rejected its inputs; names the failed check."""


class FileFormatError(ImuSynthError):
    """An input file does not match the documented column/format contract."""
