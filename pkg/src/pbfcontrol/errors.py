"""Exception hierarchy.

``ConfigError`` subclasses map to CLI exit code 2, ``NumericalError``
subclasses to exit code 3.
"""


class PbfError(Exception):
    """Base class for all package errors."""


class ConfigError(PbfError, ValueError):
    """Invalid input, configuration or missing artifact."""


class NumericalError(PbfError, ArithmeticError):
    """A numerical procedure failed."""


class EmptyGeometry(ConfigError):
    pass


class BadResolution(ConfigError):
    pass


class BadElement(NumericalError):
    pass


class NoExposedSurface(ConfigError):
    pass


class BadOperatingPoint(ConfigError):
    pass


class EmptyFOV(ConfigError):
    pass


class TooLarge(ConfigError):
    pass


class BadHorizon(ConfigError):
    pass


class TooFewMembers(ConfigError):
    pass


class QuadratureFailure(NumericalError):
    pass


class BadStep(NumericalError):
    pass


class IntegratorFailure(NumericalError):
    pass
