"""Exception types shared across the package."""


class CausalHistError(Exception):
    """Base class for errors raised by causalhist."""


class ValidationError(CausalHistError, ValueError):
    """Input violates a physical or structural precondition."""


class ResourceLimitError(CausalHistError):
    """A configured resource cap would be exceeded.

    ``cap`` names the limit that refused the request.
    """

    def __init__(self, message: str, cap: str = ""):
        super().__init__(message)
        self.cap = cap


class NumericalCheckError(CausalHistError):
    """An internal numerical identity failed beyond tolerance."""
