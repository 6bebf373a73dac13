"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see :mod:`vjepa_fer.cli`).
"""


class VJepaError(Exception):
    exit_code = 2


class ConfigError(VJepaError, ValueError):
    exit_code = 1


class DimensionError(VJepaError, ValueError):
    exit_code = 2


class UsageError(VJepaError, RuntimeError):
    exit_code = 1


class ProtocolError(VJepaError, ValueError):
    exit_code = 2


class FormatError(VJepaError, ValueError):
    """Malformed binary container; ``offset`` is the byte position of the fault."""

    exit_code = 2

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(VJepaError, FloatingPointError):
    exit_code = 3
