"""
flakeloc error types.

Input problems (bad files, violated preconditions) and internal consistency
failures are kept apart so the command line can map them to exit codes 1 and 2.
"""


class FlakelocError(Exception):
    """Base class for every error raised by flakeloc."""


class InputValidationError(FlakelocError, ValueError):
    """User input does not satisfy a format contract or precondition."""

    def __init__(self, message: str, source: str = ""):
        self.source = source
        super().__init__(f"{source}: {message}" if source else message)


class InvariantViolation(FlakelocError, AssertionError):
    """An internal invariant did not hold."""
