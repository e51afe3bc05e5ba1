"""Exception types shared across the package."""


class OpenSCRError(Exception):
    """Base class for all errors raised by openscr."""


class ValidationError(OpenSCRError):
    """Invalid or inconsistent input data, configuration, or schema."""


class NumericalError(OpenSCRError):
    """A computation produced an unusable numerical result."""
