"""Exception hierarchy used across the package."""

import numpy as np


class SurrocalError(Exception):
    """Base class for all package errors."""


class ShapeError(SurrocalError, ValueError):
    """Array dimensions are inconsistent with the requested operation."""


class ParameterDomainError(SurrocalError, ValueError):
    """A parameter lies outside its admissible domain."""


class SingularCovarianceError(SurrocalError, np.linalg.LinAlgError):
    """A covariance matrix could not be factorized.

    Attributes
    ----------
    min_eigenvalue : float or None
        Smallest eigenvalue observed, when it was computed.
    dataset : str or None
        Dataset the failure belongs to, when known.
    """

    def __init__(self, message, min_eigenvalue=None, dataset=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.dataset = dataset


class NumericalFailureError(SurrocalError, ArithmeticError):
    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class InsufficientReplicatesError(SurrocalError, ValueError):
    pass


class DegenerateCovarianceError(SurrocalError, ValueError):
    pass


class DegenerateBandwidthError(SurrocalError, ValueError):
    pass


class InitializationError(SurrocalError, RuntimeError):
    """No finite objective value was found on the initial simplex."""


class FitFailureError(SurrocalError, RuntimeError):
    """Emulator likelihood optimization never produced a finite value."""

    def __init__(self, message, best_iterate=None):
        super().__init__(message)
        self.best_iterate = best_iterate


class CalibrationFailureError(SurrocalError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class BootstrapFailureError(SurrocalError, RuntimeError):
    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or []


class TooSmallDesignError(SurrocalError, ValueError):
    pass


class SchemaError(SurrocalError, ValueError):
    """An archive or JSON document does not match its declared schema."""
