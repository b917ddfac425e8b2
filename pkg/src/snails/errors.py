class SnailsError(Exception):
    """Base class for errors raised by this package."""


class InvalidParameterError(SnailsError, ValueError):
    pass


class ConsistencyError(SnailsError, RuntimeError):
    """Internal invariant broken (mismatched states, malformed logs)."""


class LogParseError(SnailsError, ValueError):
    pass


class ResourceLimitError(SnailsError, RuntimeError):
    """A run exceeded its configured particle cap.

    ``partial`` holds whatever state existed when the limit was hit.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ContainmentViolation(SnailsError, AssertionError):
    pass
