"""Exception types shared across the toolkit."""


class SnapclusterError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SnapclusterError, ValueError):
    """Inputs violate a documented precondition or invariant."""


class FormatError(SnapclusterError):
    """A file is not a valid container (bad magic, version, or size)."""


class CoverageError(SnapclusterError):
    """A remap target block is not covered by any source points."""


class DataError(SnapclusterError):
    """Input values are unusable, e.g. NaN coordinates."""
