"""Error hierarchy shared by services and CLI commands.

Each error class carries the process exit code the CLI returns for it.
"""


class SpaarsError(Exception):
    """Base class for all expected failures."""

    exit_code = 1


class UsageError(SpaarsError):
    """Invalid command-line usage (unknown tags, refused overwrite)."""

    exit_code = 2


class ConfigurationError(SpaarsError):
    """Invalid configuration, dimension mismatch, or unreadable artifact."""

    exit_code = 3


class NumericError(SpaarsError):
    """Non-finite loss, gradient, or target."""

    exit_code = 4


class VerificationFailure(SpaarsError):
    """At least one non-qualitative verification check failed."""

    exit_code = 5


class InputError(SpaarsError):
    """Empty or out-of-range inputs to an operation."""

    exit_code = 6


class UnsupportedError(SpaarsError):
    """Request outside what an exhaustive oracle can handle."""

    exit_code = 7


class InvariantViolation(SpaarsError):
    """An internal contract was broken (e.g. a frozen network changed)."""

    exit_code = 8
