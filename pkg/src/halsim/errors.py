"""Exception hierarchy shared by all modules."""


class HalsimError(Exception):
    """Base class for every error raised by this package."""


class DataError(HalsimError):
    """Input data is malformed or unusable (CLI exit code 2)."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class GapError(DataError):
    pass


class WindowTooLarge(DataError):
    pass


class DegenerateSeries(DataError):
    pass


class InvalidSpec(DataError):
    pass


class EmptyInput(DataError):
    pass


class TooFewSamples(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class DegenerateTruncation(DataError):
    pass


class FitDiverged(HalsimError):
    pass


class HorizonMismatch(HalsimError):
    pass


class ModelUnavailable(HalsimError):
    pass


class MissingPrediction(HalsimError):
    pass


class DegeneratePsnrRange(DataError):
    pass


class NoSegmentAvailable(HalsimError):
    pass


class ConfigError(HalsimError):
    """Invalid configuration (CLI exit code 1)."""
