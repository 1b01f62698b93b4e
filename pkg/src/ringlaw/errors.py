"""Exception hierarchy shared by all ringlaw modules."""


class RingLawError(Exception):
    """Base class for every error raised by ringlaw."""


class ValidationError(RingLawError, ValueError):
    pass


class ZeroVarianceRow(ValidationError):
    """A constant row; the transform needs every row to vary."""

    def __init__(self, row, message=None):
        self.row = row
        super().__init__(message or f"row {row!r} has zero variance")


class DimensionMismatch(ValidationError):
    pass


class DecompositionFailure(RingLawError, ArithmeticError):
    pass


class EigenFailure(RingLawError, ArithmeticError):
    pass


class EmptySpectrum(ValidationError):
    pass


class InsufficientHistory(ValidationError):
    pass


class UnknownBus(ValidationError, KeyError):
    def __str__(self):
        return ValueError.__str__(self)


class SeriesTooShort(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class FormatError(ParseError):
    pass


class DisconnectedGraph(ValidationError):
    pass


class EmptyPointSet(ValidationError):
    pass


class TimeNotInSeries(ValidationError, KeyError):
    def __str__(self):
        return ValueError.__str__(self)


class WindowError(RingLawError):
    """A numerical failure inside one analysis window, with its end time attached."""

    def __init__(self, end_time, cause):
        self.end_time = end_time
        self.cause = cause
        super().__init__(f"window ending at t={end_time}: {cause}")


class IoError(RingLawError, OSError):
    pass
