"""Gaussian-process surrogate calibration of a simulator against observed fields."""

from surrocal._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
