"""Exception hierarchy.

The CLI maps each family to an exit code: validation problems exit with 2,
unreadable or malformed files with 3, numeric failures with 4.
"""


class StegSageError(Exception):
    exit_code = 1


class ValidationError(StegSageError, ValueError):
    exit_code = 2


class DimensionError(ValidationError):
    """Shapes or vector widths that do not line up."""


class ConfigMismatchError(ValidationError):
    """A stored artifact was produced under a different configuration."""


class FileFormatError(StegSageError):
    exit_code = 3


class BadMagicError(FileFormatError):
    pass


class IndexRangeError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class VersionMismatchError(FileFormatError):
    pass


class NumericError(StegSageError, ArithmeticError):
    exit_code = 4
