"""Shared exception types."""


class NumericalError(RuntimeError):
    """A linear-algebra operation failed beyond recoverable jitter/retry."""


class ConfigError(ValueError):
    """A configuration file or field is invalid; message names the offender."""
