"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/usage and malformed
input files exit with 2, numeric failures and anything unexpected with 1.
"""


class CeglError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CeglError):
    """Invalid configuration value, unknown config key, or misuse of an API."""


class FormatError(CeglError):
    """A file does not conform to its declared format (magic, version, layout)."""


class TruncatedFileError(FormatError):
    """A binary file ended before its declared payload was complete."""


class DataError(CeglError):
    """Well-formed container holding invalid payload values (NaN/Inf)."""


class NumericError(CeglError):
    """A computation produced non-finite values where finite ones are required."""
