"""Exception hierarchy shared by every codec stage."""


class GsspError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(GsspError):
    """Malformed PLY header or body."""


class SchemaError(GsspError):
    """A required PLY vertex property is missing."""


class DataError(GsspError):
    """Non-finite or otherwise invalid numeric data."""

    def __init__(self, message, vertex=None):
        super().__init__(message)
        self.vertex = vertex


class InputError(GsspError, ValueError):
    """Invalid argument to an operation (empty sets, bad parameters)."""


class SplitRefused(GsspError):
    """A cluster is too small to be split."""


class FormatError(GsspError):
    """Corrupt or structurally invalid encoded stream."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    """Container written by an unsupported format version."""


class IncompleteError(GsspError):
    """Not enough bytes to decode the requested prefix."""

    def __init__(self, message, bytes_needed, bytes_available):
        super().__init__(f"{message}: need {bytes_needed} bytes, have {bytes_available}")
        self.bytes_needed = bytes_needed
        self.bytes_available = bytes_available
