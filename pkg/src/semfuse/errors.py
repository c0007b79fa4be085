"""Exception hierarchy shared across the package."""


class SemfuseError(Exception):
    """Base class for all package errors."""


class ContractError(SemfuseError, ValueError):
    """A precondition or invariant of an operation was violated."""


class InvalidCameraError(ContractError):
    """Camera pose matrix is singular or not a rigid transform."""


class ConfigurationError(SemfuseError, ValueError):
    """Bad run configuration (unknown key, missing threshold, out-of-range value)."""


class LoadError(SemfuseError, ValueError):
    """A file could not be parsed into a valid in-memory object."""


class SceneSpecError(SemfuseError, ValueError):
    """Scene description is inconsistent (object outside room, bad density)."""


class UndefinedMetricError(SemfuseError, ValueError):
    """Metric requested on an empty confusion matrix."""


class EncodeError(SemfuseError, ValueError):
    """Message cannot be serialized (oversized payload, bad field)."""


class StreamError(SemfuseError, RuntimeError):
    """Unrecoverable wire-level corruption; the connection must be closed."""
