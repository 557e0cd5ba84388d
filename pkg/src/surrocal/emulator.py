"""Gaussian-process emulator of replicated simulator output.

The ensemble-mean output ``f`` (stacked over design, space and time) is
modelled as

    f ~ N(mu 1, sigma2 (C_theta kron C_Z kron C_T) + omega2 (I kron Gamma))

with ``omega2`` pooled from the replicate spread, ``Gamma`` a thresholded
multiresolution estimate of the replicate-residual covariance, ``mu``
profiled by generalized least squares and the remaining parameters found by
direct search.  Prediction at an untried parameter vector gives the
conditional mean and covariance of the output there.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from surrocal.data import Grid, OutputEnsemble
from surrocal.errors import (FitFailureError, InitializationError,
                             InsufficientReplicatesError, NumericalFailureError)
from surrocal.kernels import (MATERN_3_2, POWER_EXPONENTIAL, KernelSpec, corr_matrix,
                              cross_corr, median_lag)
from surrocal.optimize import nelder_mead
from surrocal.tensor_linalg import DenseFactor, structured_factorize
from surrocal.wavelet import wavelet_regularized_cov

log = logging.getLogger(__name__)

LOG2PI = math.log(2.0 * math.pi)
PSD_RTOL = 1e-8
# fits reject covariances conditioned worse than this (only binds when omega2 ~ 0)
FIT_MIN_RCOND = 1e-10


@dataclass(frozen=True)
class EmulatorConfig:
    family: str = POWER_EXPONENTIAL
    threshold_frac: float = 0.9
    exempt_diagonal: bool = True
    paper_literal: bool = False
    max_evals: int = 3000
    restarts: int = 1
    tol: float = 1e-4
    seed: int = 0
    dense_fallback: bool = False


@dataclass(frozen=True, eq=False)
class EmulatorParams:
    """Serializable emulator parameters (one row of a parameter table plus Gamma)."""

    dataset: str
    mu: float
    sigma2: float
    omega2: float
    kernel_theta: KernelSpec
    kernel_z: KernelSpec | None = None
    kernel_t: KernelSpec | None = None
    gamma: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "mu": self.mu,
            "sigma2": self.sigma2,
            "omega2": self.omega2,
            "kernel_theta": self.kernel_theta.to_dict(),
            "kernel_Z": None if self.kernel_z is None else self.kernel_z.to_dict(),
            "kernel_T": None if self.kernel_t is None else self.kernel_t.to_dict(),
            "gamma": None if self.gamma is None else np.asarray(self.gamma).tolist(),
            "flags": dict(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmulatorParams":
        opt = lambda k: None if d.get(k) is None else KernelSpec.from_dict(d[k])
        gamma = d.get("gamma")
        return cls(
            dataset=d["dataset"], mu=float(d["mu"]), sigma2=float(d["sigma2"]),
            omega2=float(d["omega2"]), kernel_theta=KernelSpec.from_dict(d["kernel_theta"]),
            kernel_z=opt("kernel_Z"), kernel_t=opt("kernel_T"),
            gamma=None if gamma is None else np.asarray(gamma, dtype=float),
            flags=dict(d.get("flags") or {}),
        )


@dataclass(frozen=True, eq=False)
class SurrogatePrediction:
    mean: np.ndarray
    cov: np.ndarray


def field_correlation(grid: Grid, kernel_z, kernel_t) -> np.ndarray:
    """``C_Z kron C_T`` on ``grid``; a missing kernel means a 1x1 identity."""
    cz = np.ones((1, 1)) if kernel_z is None else corr_matrix(grid.z, kernel_z)
    ct = np.ones((1, 1)) if kernel_t is None else corr_matrix(grid.t, kernel_t)
    if cz.shape[0] != grid.dims[0] or ct.shape[0] != grid.dims[1]:
        raise ValueError(f"kernels do not cover grid dims {grid.dims}")
    return np.kron(cz, ct)


def pooled_omega2(ensemble: OutputEnsemble, mean_scaling: bool = False) -> float:
    """Average over all cells of the unbiased across-replicate variance.

    With ``mean_scaling`` the result is divided by R, giving the noise
    variance of the ensemble mean rather than of a single member.
    """
    if ensemble.R < 2:
        raise InsufficientReplicatesError(f"need at least 2 replicates, got {ensemble.R}")
    w = float(np.var(ensemble.members, axis=0, ddof=1).mean())
    return w / ensemble.R if mean_scaling else w


def replicate_residuals(ensemble: OutputEnsemble) -> np.ndarray:
    """Member fields minus their per-design mean, shape (R*D, m)."""
    res = ensemble.members - ensemble.members.mean(axis=0, keepdims=True)
    return res.reshape(-1, ensemble.m)


def _gamma_or_identity(gamma, m):
    return np.eye(m) if gamma is None else np.asarray(gamma, dtype=float)


def _factor_for(params, design, grid, dense_fallback=False):
    C = corr_matrix(design, params.kernel_theta)
    K = field_correlation(grid, params.kernel_z, params.kernel_t)
    G = _gamma_or_identity(params.gamma, grid.m)
    return structured_factorize(C, K, G, params.sigma2, params.omega2, dense_fallback), K


def emulator_loglik(params: EmulatorParams, ensemble: OutputEnsemble, dense: bool = False) -> float:
    """Gaussian log-likelihood of the ensemble mean under ``params`` (``mu`` fixed)."""
    factor, _ = _factor_for(params, ensemble.design, ensemble.grid, dense)
    r = (ensemble.mean_field() - params.mu).ravel()
    return -0.5 * (r.size * LOG2PI + factor.logdet() + factor.quad_form(r))


def _profiled(factor, f):
    """GLS mean and log-likelihood with ``mu`` profiled out."""
    n = f.size
    if isinstance(factor, DenseFactor):
        sol = factor.solve(np.column_stack([np.ones(n), f.ravel()]))
        aa, ab = sol[:, 0].sum(), sol[:, 1].sum()
        mu = ab / aa
        r = f.ravel() - mu
        quad = factor.quad_form(r)
    else:
        inv = 1.0 / factor.combined
        b = factor.to_eigen(f.ravel())
        a = np.outer(factor.eigvectors_theta.sum(axis=0), factor.right.sum(axis=0))
        aa = np.sum(a * a * inv)
        ab = np.sum(a * b * inv)
        mu = ab / aa
        quad = np.sum((b - mu * a) ** 2 * inv)
    return float(mu), float(-0.5 * (n * LOG2PI + factor.logdet() + quad))


def _well_conditioned(factor) -> bool:
    if isinstance(factor, DenseFactor):
        return factor.jitter == 0.0
    c = factor.combined
    return factor.nugget == 0.0 and c.min() >= FIT_MIN_RCOND * c.max()


class _Layout:
    """Maps the search vector to (sigma2, kernel_theta, kernel_z, kernel_t)."""

    def __init__(self, design, grid, family, f, omega2):
        self.family = family
        self.n_theta = design.shape[1]
        self.use_z = grid.dims[0] > 1
        self.use_t = grid.dims[1] > 1
        var = float(np.var(f))
        scale = var if var > 0 else 1.0
        s2 = var - omega2 if var - omega2 > 0.1 * var else 0.1 * var
        if not s2 > 0:
            s2 = scale
        x0, bounds = [math.log(s2)], [(math.log(scale * 1e-8), math.log(scale * 1e4))]
        span = math.log(1e4)
        for lag in median_lag(design):
            le = math.log(math.log(2.0) / lag)
            x0 += [le, 1.0]
            bounds += [(le - span, le + span), (0.0, 2.0)]
        for coords, used in ((grid.z, self.use_z), (grid.t, self.use_t)):
            if not used:
                continue
            lag = median_lag(coords)[0]
            if family == MATERN_3_2:
                la = math.log(lag)
                x0 += [la]
                bounds += [(la - math.log(1e3), la + math.log(1e3))]
            else:
                le = math.log(math.log(2.0) / lag)
                x0 += [le, 1.0]
                bounds += [(le - span, le + span), (0.0, 2.0)]
        self.x0 = np.array(x0)
        self.bounds = bounds

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        sigma2 = math.exp(x[0])
        k = 1
        eta = np.exp(x[k:k + 2 * self.n_theta:2])
        p = x[k + 1:k + 2 * self.n_theta:2]
        ktheta = KernelSpec.powexp(eta, p)
        k += 2 * self.n_theta
        kz = kt = None
        for which in ("z", "t"):
            if not (self.use_z if which == "z" else self.use_t):
                continue
            if self.family == MATERN_3_2:
                spec = KernelSpec.matern([math.exp(x[k])])
                k += 1
            else:
                spec = KernelSpec.powexp([math.exp(x[k])], [x[k + 1]])
                k += 2
            if which == "z":
                kz = spec
            else:
                kt = spec
        return sigma2, ktheta, kz, kt


class EmulatorFit:
    """A fitted emulator with cached factorizations for fast prediction.

    Built from parameters plus the training design and ensemble-mean field;
    immutable afterwards.
    """

    def __init__(self, params: EmulatorParams, design, grid: Grid, field_mean,
                 dense_fallback: bool = False, loglik: float | None = None, trace=None):
        self.params = params
        self.design = np.asarray(design, dtype=float)
        self.grid = grid
        self.field = np.asarray(field_mean, dtype=float).reshape(self.design.shape[0], grid.m)
        self.dense_fallback = dense_fallback
        self.trace = dict(trace or {})
        factor, K = _factor_for(params, self.design, grid, dense_fallback)
        self.factor = factor
        self.K = K
        self.gamma_eff = _gamma_or_identity(params.gamma, grid.m)
        resid = (self.field - params.mu).ravel()
        self.alpha = factor.solve(resid).reshape(self.field.shape)
        if loglik is None:
            loglik = -0.5 * (resid.size * LOG2PI + factor.logdet() + factor.quad_form(resid))
        self.loglik = float(loglik)
        if not dense_fallback:
            f = factor
            self.gamma_eff = f.whitener @ f.whitener.T
            self._P = f.whitener @ f.eigvectors_inner
            self._inv_combined = 1.0 / f.combined

    # parameter pass-through
    dataset = property(lambda self: self.params.dataset)
    mu = property(lambda self: self.params.mu)
    sigma2 = property(lambda self: self.params.sigma2)
    omega2 = property(lambda self: self.params.omega2)
    kernel_theta = property(lambda self: self.params.kernel_theta)
    kernel_z = property(lambda self: self.params.kernel_z)
    kernel_t = property(lambda self: self.params.kernel_t)
    gamma = property(lambda self: self.params.gamma)

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def bounds(self) -> np.ndarray:
        return np.column_stack([self.design.min(axis=0), self.design.max(axis=0)])

    def cross_corr(self, theta) -> np.ndarray:
        return cross_corr(np.atleast_2d(theta), self.design, self.kernel_theta)[0]

    def moments(self, theta, check_psd=True):
        """Surrogate mean and covariance at ``theta`` (no extrapolation warning)."""
        c = self.cross_corr(theta)
        s2, w2 = self.sigma2, self.omega2
        mean = self.mu + s2 * (self.K @ (self.alpha.T @ c))
        if self.dense_fallback:
            return mean, self._dense_cov(c, check_psd)
        f = self.factor
        a = f.eigvectors_theta.T @ c
        w = (a * a) @ self._inv_combined
        mu_m = f.eigvals_inner
        prior = s2 * mu_m + w2
        v = prior - s2 * s2 * mu_m * mu_m * w
        if check_psd and np.any(v < -PSD_RTOL * prior):
            worst = float(np.min(v / np.where(prior > 0, prior, 1.0)))
            raise NumericalFailureError(
                f"surrogate covariance indefinite (relative eigenvalue {worst:.3e})", worst)
        V = (self._P * np.maximum(v, 0.0)) @ self._P.T
        return mean, 0.5 * (V + V.T)

    def _dense_cov(self, c, check_psd):
        s2 = self.sigma2
        St = s2 * np.kron(c[None, :], self.K)  # (m, D*m)
        V = s2 * self.K + self.omega2 * self.gamma_eff - St @ self.factor.solve(St.T)
        V = 0.5 * (V + V.T)
        w, Q = np.linalg.eigh(V)
        top = max(w[-1], 0.0)
        if check_psd and w[0] < -PSD_RTOL * max(top, s2 + self.omega2):
            raise NumericalFailureError(
                f"surrogate covariance indefinite (min eigenvalue {w[0]:.3e})", float(w[0]))
        if w[0] < 0:
            V = (Q * np.maximum(w, 0.0)) @ Q.T
        return V

    def predict(self, theta) -> SurrogatePrediction:
        theta = np.asarray(theta, dtype=float).ravel()
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        b = self.bounds
        if np.any(theta < b[:, 0]) or np.any(theta > b[:, 1]):
            warnings.warn(f"theta {theta} outside the design bounding box; extrapolating",
                          stacklevel=2)
        mean, cov = self.moments(theta)
        return SurrogatePrediction(mean, cov)

    def to_dict(self) -> dict:
        d = self.params.to_dict()
        d["loglik"] = self.loglik
        d["grid"] = self.grid.to_dict()
        return d


def predict_surrogate(fit: EmulatorFit, theta) -> SurrogatePrediction:
    return fit.predict(theta)


def fit_emulator(ensemble: OutputEnsemble, config: EmulatorConfig = EmulatorConfig()) -> EmulatorFit:
    """Estimate emulator parameters for one dataset by maximum likelihood."""
    if ensemble.R < 2:
        raise InsufficientReplicatesError(f"need at least 2 replicates, got {ensemble.R}")
    design, grid = ensemble.design, ensemble.grid
    f = ensemble.mean_field()
    omega2 = pooled_omega2(ensemble, mean_scaling=not config.paper_literal)
    gamma = None
    if grid.m > 1:
        if omega2 > 0:
            gamma = wavelet_regularized_cov(replicate_residuals(ensemble), grid.dims,
                                            config.threshold_frac, config.exempt_diagonal)
        else:
            gamma = np.eye(grid.m)
    G = _gamma_or_identity(gamma, grid.m)
    layout = _Layout(design, grid, config.family, f, omega2)

    def objective(x):
        sigma2, kth, kz, kt = layout.unpack(x)
        C = corr_matrix(design, kth)
        K = field_correlation(grid, kz, kt)
        factor = structured_factorize(C, K, G, sigma2, omega2, config.dense_fallback)
        if not _well_conditioned(factor):
            return -math.inf
        return _profiled(factor, f)[1]

    try:
        res = nelder_mead(objective, layout.x0, layout.bounds, max_evals=config.max_evals,
                          tol=config.tol, restarts=config.restarts, seed=config.seed)
    except InitializationError as exc:
        raise FitFailureError(f"{ensemble.dataset_id}: {exc}", best_iterate=layout.x0) from exc
    if not math.isfinite(res.fun):
        raise FitFailureError(f"{ensemble.dataset_id}: no finite log-likelihood",
                              best_iterate=res.x)

    sigma2, kth, kz, kt = layout.unpack(res.x)
    C = corr_matrix(design, kth)
    K = field_correlation(grid, kz, kt)
    mu, ll = _profiled(structured_factorize(C, K, G, sigma2, omega2, config.dense_fallback), f)
    flags = {
        "ensemble_mean_scaling": not config.paper_literal,
        "threshold_frac": config.threshold_frac,
        "exempt_diagonal": config.exempt_diagonal,
        "family": config.family,
    }
    params = EmulatorParams(ensemble.dataset_id, mu, sigma2, omega2, kth, kz, kt, gamma, flags)
    trace = {"nfev": res.nfev, "nit": res.nit, "restarts": res.restarts,
             "converged": res.converged}
    log.info("%s emulator: loglik %.4f after %d evaluations", ensemble.dataset_id, ll, res.nfev)
    return EmulatorFit(params, design, grid, f, config.dense_fallback, ll, trace)
