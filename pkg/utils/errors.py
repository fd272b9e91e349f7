"""
Error types shared by the library and the command line.

Every error carries an `exit_code` and a human readable `detail`, the same
pair the CLI turns into a process exit status and a message.
"""


class TTSSError(Exception):
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class UsageError(TTSSError, ValueError):
    """Bad arguments or configuration."""
    exit_code = 1


class DataError(TTSSError, ValueError):
    """Input data is malformed, empty or inconsistent with the requested shape."""
    exit_code = 2


class ModelFormatError(DataError):
    """A persisted model file could not be decoded."""


class NumericError(TTSSError, ArithmeticError):
    """A numerical precondition failed or a solver could not proceed."""
    exit_code = 3
