"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A parameter is outside its documented domain."""


class TruncationError(RuntimeError):
    """The requested photocount window is too small to hold the distribution
    to the guaranteed accuracy."""
