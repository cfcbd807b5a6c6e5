"""Exception hierarchy shared across the package."""


class BidimtError(Exception):
    """Base class for all package errors."""


class ConfigError(BidimtError):
    """Invalid configuration or incompatible shapes."""


class UsageError(BidimtError):
    """An API was called in a way its contract forbids."""


class DataError(BidimtError):
    """Malformed or inconsistent input data."""


class NumericError(BidimtError):
    """A computation produced NaN or Inf."""


class CheckpointError(BidimtError):
    """A checkpoint file is corrupt or inconsistent with the config."""
