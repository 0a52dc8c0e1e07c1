"""Exception hierarchy shared by all modules."""


class DeformSeqError(Exception):
    """Base class for package errors."""


class InvalidInputError(DeformSeqError, ValueError):
    pass


class ShapeError(DeformSeqError, ValueError):
    pass


class SchemaError(DeformSeqError, ValueError):
    """A CSV or JSON document does not match the expected layout."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class StateError(DeformSeqError, RuntimeError):
    pass


class DivergenceError(DeformSeqError, ArithmeticError):
    """Training produced a non-finite loss or gradient.

    ``history`` carries whatever was recorded before the failure.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class StudyError(DeformSeqError, RuntimeError):
    pass
