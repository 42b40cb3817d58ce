"""Exception hierarchy shared across the package."""


class MetsegError(Exception):
    """Base class for all package errors."""


class DataError(MetsegError, ValueError):
    """Malformed, missing or inconsistent input data."""


class ShapeError(MetsegError, ValueError):
    """Array shape does not satisfy an operation's contract."""


class ConfigError(MetsegError, ValueError):
    """Invalid or incomplete run configuration."""


class TrainingError(MetsegError, RuntimeError):
    """Training could not proceed (empty split, non-finite loss, ...)."""
