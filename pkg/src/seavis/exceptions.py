"""Exception hierarchy shared by all modules."""


class SeavisError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SeavisError, ValueError):
    """Array shapes do not conform."""


class MaskError(SeavisError, ValueError):
    """An additive mask excludes every column of some row."""


class ConfigurationError(SeavisError, ValueError):
    """Invalid hyper-parameter or scenario configuration."""


class EligibilityError(SeavisError, ValueError):
    """A contrastive set is missing the frames it needs."""


class LossTermError(SeavisError, ValueError):
    """A loss term is not finite."""

    def __init__(self, term, value):
        super().__init__(f"loss term {term!r} is not finite: {value!r}")
        self.term = term
        self.value = value


class OracleError(SeavisError, ArithmeticError):
    """The finite-difference oracle hit a non-finite evaluation."""


class OrderingError(SeavisError, ValueError):
    """Frames were submitted out of order or twice."""


class FutureAccessError(OrderingError):
    """A frame beyond the current stream position was read."""


class StreamParseError(SeavisError, ValueError):
    """A JSON-lines file could not be parsed."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
