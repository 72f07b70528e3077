"""Exception taxonomy and CLI exit codes.

Plain argument misuse inside library functions raises ValueError. The
classes below mark failures that the CLI maps to distinct exit codes.
"""


class ConfigError(Exception):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(Exception):
    """Unreadable or inconsistent input data (exit code 3)."""


class FormatError(DataError):
    """Malformed file contents: bad magic, truncation, unsupported encoding."""


class NumericError(Exception):
    """Non-finite values or failed numeric validation (exit code 4)."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
