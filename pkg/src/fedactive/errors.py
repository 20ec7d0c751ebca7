"""Exception types shared across the package.

Each carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class FedActiveError(Exception):
    exit_code = 1


class ConfigError(FedActiveError, ValueError):
    exit_code = 2


class DataFormatError(FedActiveError, ValueError):
    exit_code = 3

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalFailure(FedActiveError, FloatingPointError):
    exit_code = 4


class ProtocolError(FedActiveError, RuntimeError):
    pass
