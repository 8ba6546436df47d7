"""Exception types shared across the package."""


class PairlinkError(Exception):
    """Base class for all package errors."""


class ParameterError(PairlinkError, ValueError):
    """An argument is outside its physical or logical domain."""


class CapacityError(PairlinkError, MemoryError):
    """A simulation would exceed the configured event budget."""


class FitError(PairlinkError, ValueError):
    """A least-squares fit cannot be carried out (e.g. aliased angles)."""


class NoCorrelationError(PairlinkError):
    """No significant correlation peak between two streams."""

    def __init__(self, score: float, threshold: float):
        super().__init__(
            f"no correlation found (peak/background score {score:.2f} < {threshold:g})"
        )
        self.score = score
        self.threshold = threshold


class StreamFormatError(PairlinkError, ValueError):
    """Base class for timestamp file parse errors."""


class HeaderError(StreamFormatError):
    """Bad magic, unsupported version, or short header."""


class TruncatedError(StreamFormatError):
    """File ends before the declared number of records."""


class MonotonicityError(StreamFormatError):
    """Timestamps decrease somewhere in the stream."""

    def __init__(self, index: int, message: str | None = None):
        super().__init__(message or f"timestamp decreases at record {index}")
        self.index = index


class ConfigError(PairlinkError, ValueError):
    """Scenario configuration is invalid; ``key`` names the offending path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class TimestampOverflowError(PairlinkError, OverflowError):
    """A shifted timestamp no longer fits the 64-bit picosecond clock."""
