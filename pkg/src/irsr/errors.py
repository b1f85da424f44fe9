"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class ArgumentError(ValueError):
    """An argument value is outside the operation's domain."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class ImageParseError(ValueError):
    """A NetPBM file is malformed; carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
