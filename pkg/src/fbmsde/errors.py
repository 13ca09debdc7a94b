"""Exception hierarchy shared by all fbmsde modules."""


class Error(Exception):
    """Base class for all fbmsde errors."""


class DomainError(Error, ValueError):
    """An input lies outside the mathematical domain of an operation.

    Examples: a Hurst index outside (0, 1), a moment engine invoked
    outside the regime where its formula is valid, a word letter larger
    than the driver dimension.
    """


class CapabilityError(Error):
    """The request is outside the invoked engine's validity.

    The message names the engines that do cover the request, if any.
    """


class ResourceError(Error):
    """The request would exceed a hard size or complexity cap."""


class NumericalError(Error):
    """A numerical routine failed to reach its accuracy target."""


class DivergenceError(NumericalError):
    """Too many Monte-Carlo replicates left the admissible region."""


class TruncationError(NumericalError):
    """A truncated series shows no sign of converging at the term cap."""
