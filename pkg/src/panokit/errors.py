"""Exception types shared across the package."""


class PanokitError(Exception):
    """Base class for all package errors."""


class DimensionError(PanokitError, ValueError):
    """Array extents are incompatible with an operation."""


class ConfigurationError(PanokitError, ValueError):
    """An option or hyperparameter is invalid."""


class HorizonDegenerateError(PanokitError, ValueError):
    """A ray is too close to the horizon (or points the wrong way) to hit a plane."""


class InvalidAnnotationError(PanokitError, ValueError):
    """A corner annotation is malformed or geometrically inconsistent."""


class DegenerateLayoutError(PanokitError, ValueError):
    """Too few corners were found to form a floor plan."""


class UndefinedMetricError(PanokitError, ValueError):
    """A metric has a zero denominator."""


class SymmetryViolationError(PanokitError, ValueError):
    """An inverse FFT produced a significant imaginary part."""
