"""Exception hierarchy shared by the pipeline stages."""


class CanReidError(Exception):
    """Base class for every error raised by this package."""


class DataError(CanReidError):
    """Input data is malformed or unusable."""


class ConfigError(CanReidError):
    """A configuration value is missing or contradictory."""


class MalformedLine(DataError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno
        self.line = line
        self.reason = reason


class LengthMismatch(MalformedLine):
    pass


class IdOutOfRange(MalformedLine):
    pass


class TooFewPoints(DataError):
    pass


class EmptyIntersection(DataError):
    pass


class WindowTooLong(DataError):
    pass


class SampleTooShort(DataError):
    pass


class TraceTooShort(DataError):
    pass


class EmptyClass(DataError):
    pass


class EmptyDataset(DataError):
    pass


class MissingChannel(DataError):
    pass


class MissingMeta(DataError):
    pass


class EmptyInput(DataError):
    pass


class NotEnoughSubsets(ConfigError):
    pass


class ConfigInfeasible(ConfigError):
    pass


class InconsistentExperts(ConfigError):
    pass


class LabelOutOfRange(DataError):
    pass


class ShapeMismatch(CanReidError, ValueError):
    pass


class FilterTooLong(ShapeMismatch):
    pass


class DegenerateBatch(CanReidError, ValueError):
    pass


class NonFiniteValue(CanReidError, ArithmeticError):
    pass


class IntegrityError(CanReidError):
    """A stored artifact does not match the hash recorded for it."""
