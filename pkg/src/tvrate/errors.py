"""Exception types shared across the package."""


class TVRateError(Exception):
    """Base class for errors raised by tvrate."""


class DomainError(TVRateError, ValueError):
    """A point, knot or domain lies outside where it is allowed."""


class ParameterError(TVRateError, ValueError):
    """An argument violates an operation's precondition."""


class NumericalError(TVRateError, RuntimeError):
    """A numerical routine failed to produce a usable answer."""
