"""Exception hierarchy.

Every error is a ``ValueError`` subclass so callers that only care about
"bad input" can catch one thing.
"""


class ProtoMatchError(ValueError):
    """Base class for all library errors."""


class ZeroVectorError(ProtoMatchError):
    pass


class DimensionMismatchError(ProtoMatchError):
    pass


class EmptyInputError(ProtoMatchError):
    pass


class NonPositiveTemperatureError(ProtoMatchError):
    pass


class CountMismatchError(ProtoMatchError):
    pass


class NegativeFrequencyError(ProtoMatchError):
    pass


class ClassOutOfRangeError(ProtoMatchError):
    pass


class EmptyBatchError(ProtoMatchError):
    pass


class EmptyClassError(ProtoMatchError):
    pass


class TooFewClassesError(ProtoMatchError):
    pass


class LengthMismatchError(ProtoMatchError):
    pass


class NumericalError(ProtoMatchError):
    """A NaN or infinity appeared during a computation."""


class ConfigError(ProtoMatchError):
    """Invalid experiment configuration.

    ``field`` holds the dotted path of the offending key, e.g. ``data.imbalance``.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class FormatError(ProtoMatchError):
    """Malformed embedding file."""
