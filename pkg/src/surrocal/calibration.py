"""Observation likelihood with surrogate error, and its maximization.

For each dataset the observed field is modelled as surrogate mean plus
surrogate error plus observation error, giving

    Y ~ N(f_tilde(theta), V(theta) + tau^2 R_Z kron R_T)

The three datasets are independent given theta, so their log-likelihoods add.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from surrocal.data import DATASETS, PARAM_NAMES, ObservationSet
from surrocal.errors import (CalibrationFailureError, InitializationError, ShapeError,
                             SingularCovarianceError, SurrocalError)
from surrocal.kernels import KernelSpec, corr_matrix, median_lag
from surrocal.optimize import nelder_mead
from surrocal.tensor_linalg import jittered_cholesky

log = logging.getLogger(__name__)

LOG2PI = math.log(2.0 * math.pi)
TIE_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class ObsNoiseSpec:
    """Observation-error scales and correlation kernels.

    ``tau`` maps dataset id to a standard deviation; ``xi`` maps dataset id to
    a ``(kernel_z, kernel_t)`` pair (``None`` for a dimension of size one).
    """

    tau: dict
    xi: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, t in self.tau.items():
            if not (t >= 0) or not math.isfinite(t):
                raise ValueError(f"tau for {name} must be finite and >= 0, got {t}")

    def to_dict(self) -> dict:
        xi = {}
        for name, (kz, kt) in self.xi.items():
            xi[name] = {"Z": None if kz is None else kz.to_dict(),
                        "T": None if kt is None else kt.to_dict()}
        return {"tau": {k: float(v) for k, v in self.tau.items()}, "xi": xi}

    @classmethod
    def from_dict(cls, d) -> "ObsNoiseSpec":
        opt = lambda v: None if v is None else KernelSpec.from_dict(v)
        xi = {name: (opt(v.get("Z")), opt(v.get("T"))) for name, v in d.get("xi", {}).items()}
        return cls({k: float(v) for k, v in d["tau"].items()}, xi)

    def obs_correlation(self, name, grid) -> np.ndarray:
        kz, kt = self.xi.get(name, (None, None))
        rz = np.ones((1, 1)) if kz is None else corr_matrix(grid.z, kz)
        rt = np.ones((1, 1)) if kt is None else corr_matrix(grid.t, kt)
        return rz, rt


@dataclass(eq=False)
class CalibrationResult:
    theta_hat: np.ndarray
    noise_hat: ObsNoiseSpec
    loglik: float
    trace: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"theta_hat": dict(zip(PARAM_NAMES, map(float, self.theta_hat)))}
        nd = self.noise_hat.to_dict()
        out["tau"] = nd["tau"]
        out["xi"] = nd["xi"]
        out["loglik"] = float(self.loglik)
        out["trace"] = self.trace
        return out

    @classmethod
    def from_dict(cls, d) -> "CalibrationResult":
        theta = np.array([d["theta_hat"][k] for k in PARAM_NAMES], dtype=float)
        noise = ObsNoiseSpec.from_dict({"tau": d["tau"], "xi": d.get("xi", {})})
        return cls(theta, noise, float(d["loglik"]), dict(d.get("trace") or {}))


def _gaussian_logpdf(resid, cov, name="observation covariance"):
    L, _ = jittered_cholesky(cov, name)
    z = sla.solve_triangular(L, resid, lower=True)
    return -0.5 * (resid.size * LOG2PI + 2.0 * np.log(np.diag(L)).sum() + z @ z)


def obs_loglik(Y, pred, tau, R1, R2) -> float:
    """Log-density of one observed field given a surrogate prediction.

    Parameters
    ----------
    Y : array
        Observed field (any shape with ``N_Y`` elements, stacking as the
        prediction).
    pred : SurrogatePrediction
        Surrogate mean and covariance at the candidate parameters.
    tau : float
        Observation-error standard deviation.
    R1, R2 : arrays
        Observation-error correlation factors (space, time).
    """
    y = np.asarray(Y, dtype=float).ravel()
    mean = np.atleast_1d(np.asarray(pred.mean, dtype=float))
    V = np.atleast_2d(np.asarray(pred.cov, dtype=float))
    R = np.kron(np.atleast_2d(R1), np.atleast_2d(R2))
    if not (y.size == mean.size == V.shape[0] == R.shape[0]):
        raise ShapeError(f"inconsistent sizes: Y {y.size}, mean {mean.size}, "
                         f"V {V.shape}, R {R.shape}")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return float(_gaussian_logpdf(y - mean, V + tau * tau * R))


def _dataset_names(obs, fits):
    names = [n for n in DATASETS if n in obs.fields and n in fits]
    if not names:
        raise ShapeError("no dataset is present in both observations and fits")
    return names


def full_loglik(obs: ObservationSet, theta, noise: ObsNoiseSpec, fits: dict) -> float:
    """Sum of the per-dataset observation log-likelihoods at ``theta``."""
    theta = np.asarray(theta, dtype=float).ravel()
    total = 0.0
    for name in _dataset_names(obs, fits):
        fit = fits[name]
        if obs.fields[name].shape != fit.grid.dims:
            raise ShapeError(f"{name}: observation {obs.fields[name].shape} vs emulator grid "
                             f"{fit.grid.dims}")
        mean, V = fit.moments(theta)
        rz, rt = noise.obs_correlation(name, fit.grid)
        tau = noise.tau[name]
        try:
            total += _gaussian_logpdf(obs.vector(name) - mean,
                                      V + tau * tau * np.kron(rz, rt), name)
        except SingularCovarianceError as exc:
            raise SingularCovarianceError(f"{name}: {exc}", exc.min_eigenvalue, name) from exc
    return float(total)


@dataclass(frozen=True)
class CalibrationConfig:
    bounds: tuple | None = None
    top_k: int = 5
    max_evals: int = 4000
    restarts: int = 1
    tol: float = 1e-7
    seed: int = 0
    free_xi_exponents: bool = False
    tau_floor: float = 1e-6
    tau_ceiling: float = 10.0
    default_tau_frac: float = 0.1


class _CalLayout:
    """Search vector = theta, then tau per dataset, then xi entries."""

    def __init__(self, obs, fits, config):
        self.names = _dataset_names(obs, fits)
        self.fits = fits
        self.grids = {n: fits[n].grid for n in self.names}
        self.free_p = config.free_xi_exponents
        if config.bounds is None:
            b = np.vstack([fits[n].bounds for n in self.names])
            lo = b[:, 0].reshape(len(self.names), -1).min(axis=0)
            hi = b[:, 1].reshape(len(self.names), -1).max(axis=0)
            self.theta_bounds = np.column_stack([lo, hi])
        else:
            self.theta_bounds = np.asarray(config.bounds, dtype=float)
        self.bounds = [tuple(b) for b in self.theta_bounds]
        self.tau0 = {}
        for n in self.names:
            scale = float(np.std(fits[n].field)) or 1.0
            self.tau0[n] = config.default_tau_frac * scale
            self.bounds.append((math.log(config.tau_floor * scale),
                                math.log(config.tau_ceiling * scale)))
        self.xi_slots = []
        self.xi0 = {}
        for n in self.names:
            g = self.grids[n]
            specs = []
            for dim, coords in (("z", g.z), ("t", g.t)):
                if coords.size < 2:
                    specs.append(None)
                    continue
                le = math.log(math.log(2.0) / median_lag(coords)[0])
                self.xi_slots.append((n, dim))
                self.bounds.append((le - math.log(1e3), le + math.log(1e3)))
                if self.free_p:
                    self.bounds.append((0.0, 2.0))
                specs.append(KernelSpec.powexp([math.exp(le)], [1.0]))
            self.xi0[n] = tuple(specs)

    def default_noise(self) -> ObsNoiseSpec:
        return ObsNoiseSpec(dict(self.tau0), dict(self.xi0))

    def pack(self, theta, noise: ObsNoiseSpec) -> np.ndarray:
        x = list(np.asarray(theta, dtype=float))
        x += [math.log(max(noise.tau[n], 1e-300)) for n in self.names]
        for n, dim in self.xi_slots:
            spec = noise.xi[n][0 if dim == "z" else 1]
            x.append(math.log(spec.eta[0]))
            if self.free_p:
                x.append(spec.p[0])
        return np.array(x)

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        theta = x[:3].copy()
        tau = {n: math.exp(v) for n, v in zip(self.names, x[3:3 + len(self.names)])}
        k = 3 + len(self.names)
        xi = {n: list(self.xi0[n]) for n in self.names}
        for n, dim in self.xi_slots:
            if self.free_p:
                spec = KernelSpec.powexp([math.exp(x[k])], [x[k + 1]])
                k += 2
            else:
                spec = KernelSpec.powexp([math.exp(x[k])], [1.0])
                k += 1
            xi[n][0 if dim == "z" else 1] = spec
        return theta, ObsNoiseSpec(tau, {n: tuple(v) for n, v in xi.items()})


def select_best(results):
    """Highest log-likelihood; near-ties go to the lexicographically smallest theta."""
    top = max(r.loglik for r in results)
    tied = [r for r in results if r.loglik >= top - TIE_ATOL]
    return min(tied, key=lambda r: tuple(r.theta_hat))


def maximize_likelihood(obs: ObservationSet, fits: dict,
                        config: CalibrationConfig = CalibrationConfig(),
                        warm_starts=(), scale: float = 1.0) -> CalibrationResult:
    """Multistart direct-search maximization of :func:`full_loglik`.

    Starts are the ``top_k`` design points ranked by the likelihood under the
    default noise settings, plus any ``warm_starts`` (CalibrationResults).
    ``scale`` > 0 multiplies the objective and the stopping tolerance; since
    the simplex only compares values, the search path is unchanged.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    layout = _CalLayout(obs, fits, config)
    noise0 = layout.default_noise()
    design = fits[layout.names[0]].design
    lo, hi = layout.theta_bounds[:, 0], layout.theta_bounds[:, 1]
    inside = np.all((design >= lo) & (design <= hi), axis=1)
    candidates = design[inside]

    diagnostics = []
    ranked = []
    for th in candidates:
        try:
            ranked.append((full_loglik(obs, th, noise0, fits), tuple(th)))
        except SurrocalError as exc:
            diagnostics.append(f"design point {th}: {exc}")
    ranked.sort(key=lambda t: (-t[0], t[1]))
    starts = [layout.pack(np.array(th), noise0) for _, th in ranked[:config.top_k]]
    for ws in warm_starts:
        theta = np.clip(ws.theta_hat, lo, hi)
        starts.append(layout.pack(theta, ws.noise_hat))
    if not starts:
        raise CalibrationFailureError("no usable starting point", diagnostics)

    def objective(x):
        theta, noise = layout.unpack(x)
        return scale * full_loglik(obs, theta, noise, fits)

    results = []
    for i, x0 in enumerate(starts):
        try:
            res = nelder_mead(objective, x0, layout.bounds, max_evals=config.max_evals,
                              tol=config.tol * scale, restarts=config.restarts, seed=config.seed)
        except InitializationError as exc:
            diagnostics.append(f"start {i}: {exc}")
            continue
        theta, noise = layout.unpack(res.x)
        results.append(CalibrationResult(theta, noise, res.fun / scale, {
            "start": i, "nfev": res.nfev, "iterations": res.nit,
            "restarts": res.restarts, "converged": res.converged}))
    if not results:
        raise CalibrationFailureError("all starts failed", diagnostics)
    best = select_best(results)
    best.trace = dict(best.trace)
    best.trace["starts"] = len(starts)
    best.trace["start_logliks"] = [float(r.loglik) for r in results]
    return best
