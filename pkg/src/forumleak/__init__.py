"""Predict which public forum posts trigger private messages after a partial leak."""

__version__ = "0.1.0"


class ForumLeakError(Exception):
    """Base class for errors raised by this package."""


class DataError(ForumLeakError):
    """Input data is malformed or violates the dataset contract."""


class ConfigError(ForumLeakError):
    """A configuration value is missing or inconsistent."""


class FitError(ForumLeakError):
    """Delay-model fitting could not proceed."""
