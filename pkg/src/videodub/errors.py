"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration and usage
problems exit 2, data problems exit 3, numeric failures exit 4.
"""


class VideodubError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(VideodubError):
    """Invalid or contradictory configuration values."""


class GeometryError(VideodubError):
    """Frame-rate arithmetic that does not work out (non-integral upsample factor etc.)."""


class DataError(VideodubError):
    """Corrupt, inconsistent, or missing sample data."""


class SchemaError(DataError):
    """Manifest or file-format violation (bad magic, missing field, dangling path)."""


class SignalError(VideodubError):
    """Unusable audio input (empty, non-finite, wrong sample rate)."""


class NumericError(VideodubError):
    """Non-finite values encountered during training or inference."""
