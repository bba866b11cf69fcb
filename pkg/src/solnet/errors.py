"""Exception hierarchy shared across the package."""


class SolnetError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SolnetError):
    """Invalid configuration or invalid arguments to an operation."""


class DataError(SolnetError):
    """Problems with input data: files, formats, availability, leakage."""


class FetchError(DataError):
    """A remote fetch failed.

    ``retryable`` distinguishes transient transport failures from
    permanent rejections (bad coordinates, malformed service output).
    """

    def __init__(self, message, retryable=False):
        super().__init__(message)
        self.retryable = retryable


class NoDataForLocation(FetchError):
    """The service has no data for the requested coordinates (e.g. sea)."""

    def __init__(self, message):
        super().__init__(message, retryable=False)


class ResponseParseError(FetchError):
    """A service response could not be parsed; ``field`` names the culprit."""

    def __init__(self, message, field=None):
        super().__init__(message, retryable=False)
        self.field = field


class LeakageError(DataError):
    """A requested data range overlaps a declared evaluation period."""


class NumericalError(SolnetError):
    """Non-finite values encountered during training or inference."""


class CheckpointError(SolnetError):
    """Base class for checkpoint read failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unknown (newer) format version."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint failed its checksum or is structurally truncated."""
