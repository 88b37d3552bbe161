"""Exception types shared across the package."""


class WgqedError(Exception):
    """Base class for all package errors."""


class ConfigError(WgqedError, ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class NumericalError(WgqedError, RuntimeError):
    """A numerical procedure failed (CLI exit code 3)."""


class IntegrationError(NumericalError):
    pass


class SteadyStateError(NumericalError):
    pass


class ContourError(NumericalError):
    pass


class FitError(NumericalError):
    pass
