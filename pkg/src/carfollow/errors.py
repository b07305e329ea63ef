"""Exception types shared across the package."""


class CarfollowError(Exception):
    """Base class for every package-specific error."""


class DomainError(CarfollowError, ValueError):
    """A numeric input left the domain where an operation is defined."""


class ConfigError(CarfollowError, ValueError):
    """Invalid configuration: bad ranges, unknown preset or mode, bad mapping."""


class TraceError(CarfollowError, ValueError):
    """A trajectory table violates the canonical-format contract."""


class DegeneracyError(CarfollowError, RuntimeError):
    """Every particle weight vanished; carries diagnostics for the report."""

    def __init__(self, message, observation=None, weight_min=None, weight_max=None):
        super().__init__(message)
        self.observation = observation
        self.weight_min = weight_min
        self.weight_max = weight_max
