"""Exception hierarchy shared by all modules."""


class GffCouplingError(Exception):
    """Base class for every error raised by the package."""


class InvalidFieldError(GffCouplingError, ValueError):
    """A lattice field has the wrong shape or carries non-finite values."""


class SymmetryError(GffCouplingError, ValueError):
    """Fourier coefficients that should describe a real field are not Hermitian."""


class DomainError(GffCouplingError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(GffCouplingError, ValueError):
    """Paired inputs do not have matching shapes."""


class SaturationError(GffCouplingError, FloatingPointError):
    """An exponent left the representable range of 64-bit floats."""

    def __init__(self, message, site=None, exponent=None):
        super().__init__(message)
        self.site = site
        self.exponent = exponent


class DegenerateWeightsError(GffCouplingError, FloatingPointError):
    """All importance weights vanished, so no estimate can be formed."""


class StepRejectedError(GffCouplingError, RuntimeError):
    """A flow step exceeded the drift clamp."""

    def __init__(self, message, scale=None, magnitude=None):
        super().__init__(message)
        self.scale = scale
        self.magnitude = magnitude


class InfeasibleError(GffCouplingError, RuntimeError):
    """The requested oracle computation would exceed its resource guard."""


class PrecisionError(GffCouplingError, ValueError):
    """Not enough data to reach the requested statistical precision."""


class ConfigError(GffCouplingError, ValueError):
    """A run configuration is malformed."""
