"""Correlation functions and correlation-matrix builders.

Two families are supported:

``power_exponential``
    ``exp(-sum_i eta_i |h_i|^p_i)`` with ``eta_i > 0`` and ``0 < p_i <= 2``.
``matern_3_2``
    product over dimensions of ``(1 + sqrt(3) h/alpha) exp(-sqrt(3) h/alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from surrocal import _backend
from surrocal.errors import ParameterDomainError, ShapeError

POWER_EXPONENTIAL = "power_exponential"
MATERN_3_2 = "matern_3_2"
FAMILIES = (POWER_EXPONENTIAL, MATERN_3_2)


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of a separable correlation function.

    Only the lists relevant to ``family`` are populated: ``eta`` and ``p`` for
    power exponential, ``alpha`` for Matérn 3/2.
    """

    family: str
    eta: tuple = field(default_factory=tuple)
    p: tuple = field(default_factory=tuple)
    alpha: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "eta", tuple(float(v) for v in self.eta))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        object.__setattr__(self, "alpha", tuple(float(v) for v in self.alpha))
        if self.family == POWER_EXPONENTIAL:
            _check_powexp(self.eta, self.p)
            if self.alpha:
                raise ParameterDomainError("power_exponential kernel takes no alpha")
        elif self.family == MATERN_3_2:
            if not self.alpha:
                raise ParameterDomainError("matern_3_2 kernel needs alpha")
            if any(not (a > 0) or not math.isfinite(a) for a in self.alpha):
                raise ParameterDomainError(f"alpha must be positive, got {self.alpha}")
            if self.eta or self.p:
                raise ParameterDomainError("matern_3_2 kernel takes no eta/p")
        else:
            raise ParameterDomainError(f"unknown kernel family {self.family!r}")

    @property
    def ndim(self) -> int:
        return len(self.alpha) if self.family == MATERN_3_2 else len(self.eta)

    @classmethod
    def powexp(cls, eta, p) -> "KernelSpec":
        return cls(POWER_EXPONENTIAL, eta=np.atleast_1d(eta), p=np.atleast_1d(p))

    @classmethod
    def matern(cls, alpha) -> "KernelSpec":
        return cls(MATERN_3_2, alpha=np.atleast_1d(alpha))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "eta": list(self.eta),
            "p": list(self.p),
            "alpha": list(self.alpha),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["family"], eta=d.get("eta", ()), p=d.get("p", ()),
                   alpha=d.get("alpha", ()))


def _check_powexp(eta, p):
    if len(eta) != len(p):
        raise ShapeError(f"eta has {len(eta)} entries but p has {len(p)}")
    for e in eta:
        if not (e > 0) or not math.isfinite(e):
            raise ParameterDomainError(f"eta must be positive and finite, got {e}")
    for q in p:
        if not (0 < q <= 2):
            raise ParameterDomainError(f"exponent p must lie in (0, 2], got {q}")


def powexp_corr(abs_lags, eta, p) -> float:
    """Scalar power-exponential correlation for per-dimension absolute lags."""
    abs_lags = [float(v) for v in np.atleast_1d(abs_lags)]
    eta = list(np.atleast_1d(eta))
    p = list(np.atleast_1d(p))
    _check_powexp(eta, p)
    if len(abs_lags) != len(eta):
        raise ShapeError("lags and parameters differ in length")
    if any(not math.isfinite(h) or h < 0 for h in abs_lags):
        raise ParameterDomainError("lags must be finite and non-negative")
    return math.exp(-sum(e * h ** q for h, e, q in zip(abs_lags, eta, p)))


def matern32_corr(abs_lag: float, alpha: float) -> float:
    if not (alpha > 0):
        raise ParameterDomainError(f"alpha must be positive, got {alpha}")
    if not math.isfinite(abs_lag) or abs_lag < 0:
        raise ParameterDomainError("lag must be finite and non-negative")
    r = math.sqrt(3.0) * abs_lag / alpha
    return (1.0 + r) * math.exp(-r)


def _as_points(points, ndim):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] != ndim:
        raise ShapeError(f"points have {pts.shape[1]} columns, kernel has ndim={ndim}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("coordinates must be finite")
    return pts


def cross_corr(points_a, points_b, spec: KernelSpec) -> np.ndarray:
    """Correlation between every row of ``points_a`` and every row of ``points_b``."""
    a = _as_points(points_a, spec.ndim)
    b = a if points_b is points_a else _as_points(points_b, spec.ndim)
    if spec.family == POWER_EXPONENTIAL:
        return _backend.powexp_cross(a, b, np.array(spec.eta), np.array(spec.p))
    return _backend.matern32_cross(a, b, np.array(spec.alpha))


def corr_matrix(points, spec: KernelSpec) -> np.ndarray:
    """Symmetric correlation matrix of a point set (unit diagonal)."""
    pts = _as_points(points, spec.ndim)
    C = cross_corr(pts, pts, spec)
    np.fill_diagonal(C, 1.0)
    return C


def median_lag(points) -> np.ndarray:
    """Per-dimension median of the nonzero pairwise absolute lags."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    iu = np.triu_indices(pts.shape[0], k=1)
    out = np.ones(pts.shape[1])
    for k in range(pts.shape[1]):
        lags = np.abs(pts[iu[0], k] - pts[iu[1], k])
        lags = lags[lags > 0]
        if lags.size:
            out[k] = np.median(lags)
    return out
