"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 2,
numeric failures exit 3, I/O failures exit 4.
"""


class FgmineError(Exception):
    """Base class for all package errors."""


class ConfigError(FgmineError):
    """A configuration value violates its invariant. Names the field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class GenerationError(FgmineError):
    """World/episode generation cannot proceed (e.g. empty split)."""


class UsageError(FgmineError):
    """An operation was called with inconsistent arguments."""


class NumericError(FgmineError):
    """Non-finite values encountered where finite ones are required."""
