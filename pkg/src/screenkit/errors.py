"""Common exception hierarchy so the CLI can catch harness errors in one place."""


class ScreenKitError(Exception):
    """Base class for all errors raised by this package."""
