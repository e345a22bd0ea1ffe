"""Exception types shared across the package.

Each error class maps to one failure family so callers (and the CLI) can
translate them into exit codes without string matching.
"""


class A2Error(Exception):
    """Base class for all package errors."""


class DimensionError(A2Error):
    """A tensor axis has an incompatible or indivisible extent."""


class ContractError(A2Error):
    """An operation was called outside its documented contract."""


class ConfigError(A2Error):
    """A model or harness configuration field is invalid."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class ResolutionError(A2Error):
    """Input spatial size does not match the required multiple."""


class FormatError(A2Error):
    """A serialized fixture or checkpoint is malformed."""


class UsageError(A2Error):
    """Bad command-line arguments (exit code 2)."""
