"""Exception hierarchy shared by every module."""


class EastError(Exception):
    """Base class for all library errors."""


class ConfigError(EastError, ValueError):
    """Invalid user-supplied configuration (CLI exit code 2)."""


class DimensionMismatch(EastError, ValueError):
    pass


class NonFiniteValue(EastError, ArithmeticError):
    pass


class EmptySequence(EastError, ValueError):
    pass


class ZeroVector(EastError, ValueError):
    pass


class BatchTooSmall(EastError, ValueError):
    pass


class DegenerateBatch(EastError, ValueError):
    """A batch whose rows collapsed to a single point within some frame."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class RaggedBatch(EastError, ValueError):
    pass


class EmptyMask(EastError, ValueError):
    pass


class WeightOutOfRange(ConfigError):
    pass


class MissingComponent(ConfigError):
    pass


class InvalidConfig(ConfigError):
    pass


class EmptyDataset(EastError, ValueError):
    pass


class EmptySplit(EastError, ValueError):
    pass


class FormatError(EastError):
    """Malformed container or checkpoint; ``offset`` is the failing byte position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class VersionMismatch(FormatError):
    pass


class NoPositives(EastError, ValueError):
    pass


class SingleClass(EastError, ValueError):
    pass
