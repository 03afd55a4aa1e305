"""Exception types shared across the toolkit."""


class CatQuantError(Exception):
    """Base class for errors raised by this package."""


class FormatError(CatQuantError):
    """A file's bytes do not match the expected on-disk format."""


class ValidationError(CatQuantError):
    """Structurally valid input violates a documented invariant."""
