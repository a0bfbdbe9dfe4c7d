"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: config errors exit 2, data errors exit 3,
numeric errors exit 4.
"""


class SparseGestError(Exception):
    """Base class for all package errors."""


class ConfigError(SparseGestError, ValueError):
    pass


class ShapeError(SparseGestError, ValueError):
    pass


class NumericError(SparseGestError, ArithmeticError):
    pass


class DataError(SparseGestError):
    """Anything wrong with input data on disk or in memory."""


class ParseError(DataError):
    def __init__(self, message, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{': '.join([', '.join(where), message])}"
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset


class VersionError(DataError):
    pass


class SchemaError(DataError):
    pass


class AnnotationError(DataError):
    pass


class SpanError(SparseGestError, ValueError):
    pass


class ProtocolError(SparseGestError):
    pass
