"""Exception hierarchy shared by every pipeline stage."""


class LFError(Exception):
    """Base class for all errors raised by lfmicroscan."""


class ConfigurationError(LFError, ValueError):
    """Invalid or unsupported configuration value."""


class DomainError(LFError, ValueError):
    """Input outside the domain an operation is defined on."""


class CalibrationError(LFError):
    """Micro-lens center detection or grid association failed."""


class FitQualityError(CalibrationError):
    """Lattice fit residual is too large to trust."""


class DegenerateSignalError(DomainError):
    """Input carries no usable structure (e.g. a constant image)."""


class RegistrationError(LFError):
    """No perspective pair produced an acceptable shift estimate."""


class GeometryError(LFError, ValueError):
    """Degenerate point configuration (too few points, all collinear)."""


class StepSizeError(LFError):
    """Iterative solver diverged with the configured step size."""
