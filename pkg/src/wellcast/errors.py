"""Exception hierarchy shared by every stage of the pipeline."""


class WellcastError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(WellcastError, ValueError):
    pass


class WrongColorSpace(WellcastError, ValueError):
    pass


class OutOfRange(WellcastError, ValueError):
    """Pixel data outside [0, 1] or non-finite."""


class MissingFrame(WellcastError, FileNotFoundError):
    pass


class DegenerateHistogram(WellcastError, ValueError):
    pass


class EmptyWell(WellcastError, ValueError):
    pass


class CropTooLarge(WellcastError, ValueError):
    pass


class TooFewFrames(WellcastError, ValueError):
    pass


class UnknownWell(WellcastError, KeyError):
    pass


class NumericOverflow(WellcastError, FloatingPointError):
    pass


class NotScalar(WellcastError, ValueError):
    pass


class EmptyDataset(WellcastError, ValueError):
    pass


class ConfigMismatch(WellcastError, ValueError):
    pass


class BadCheckpoint(WellcastError, ValueError):
    pass


class ConfigError(WellcastError, ValueError):
    pass
