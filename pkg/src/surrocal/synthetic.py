"""A cheap, fully specified stand-in simulator and its brute-force likelihood.

Toy physics (with ``kappa = sqrt(K_v)`` and latitude ``zeta`` in radians)::

    a_z      = 0.5 + 0.5 cos(zeta_z)             latitude warming profile
    b_z      = 0.3 cos(zeta_z)                   aerosol profile
    lam(t)   = 1 - exp(-t / (1 + 2 kappa))       response, decade t = 1..N_T
    c_l      = cos(pi (l-1)/(L-1)) - 0.3         vertical profile, l = 1..L
    surface  = S lam(t) a_z + F b_z
    ocean    = 0.05 S kappa / (1 + kappa) + 0.02 F
    upper    = (S a_z + 0.5 F b_z) c_l

Ensemble noise is independent across replicates and latitudes and AR(1)
(coefficient 0.5) along the time/level axis, with marginal sd
``noise_scale``.

Random streams come from numpy's counter-based Philox generator keyed by
``SeedSequence(seed, spawn_key=key)``; every stream used here has a fixed key
so worlds regenerate bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from surrocal.data import DATASETS, OCEAN, SURFACE, UPPER_AIR, Grid, ObservationSet, OutputEnsemble
from surrocal.errors import ParameterDomainError, TooSmallDesignError
from surrocal.kernels import KernelSpec, corr_matrix

DEFAULT_BOUNDS = ((0.5, 10.0), (0.0, 8.0), (-1.5, 0.5))
PRESSURE_LEVELS_8 = (850.0, 700.0, 500.0, 300.0, 200.0, 150.0, 100.0, 50.0)
AR_COEF = 0.5

# stream keys
_DESIGN, _ENSEMBLE, _OBS = 1, 2, 3


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for stream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def surface_grid(n_z=4, n_t=5) -> Grid:
    lat = -90.0 + 180.0 * (np.arange(n_z) + 0.5) / n_z
    decades = 1995.0 - 10.0 * n_t + 5.0 + 10.0 * np.arange(n_t)
    return Grid(lat, decades)


def upper_air_grid(n_z=26, n_levels=8) -> Grid:
    lat = (np.arange(n_z) - (n_z - 1) / 2.0) * 5.0
    if n_levels == 8:
        p = np.array(PRESSURE_LEVELS_8)
    else:
        p = np.linspace(850.0, 50.0, n_levels)
    return Grid(lat, p)


def default_grids(surface=(4, 5), upper=(26, 8)) -> dict:
    return {SURFACE: surface_grid(*surface), OCEAN: Grid.scalar(),
            UPPER_AIR: upper_air_grid(*upper)}


def _check_bounds(bounds):
    b = np.asarray(bounds, dtype=float)
    if b.shape != (3, 2) or np.any(b[:, 0] >= b[:, 1]):
        raise ParameterDomainError(f"bounds must be three (lo, hi) intervals, got {bounds}")
    return b


def sample_design(bounds=DEFAULT_BOUNDS, n_total=306, dense_region=None,
                  dense_frac=0.4, seed=0) -> np.ndarray:
    """Near-factorial lattice over ``bounds`` plus extra points in ``dense_region``.

    Lattice points are cell centers jittered by at most 5% of a cell, so they
    stay strictly inside the box.  Returns an (n_total, 3) array.
    """
    if n_total < 8:
        raise TooSmallDesignError(f"design needs at least 8 points, got {n_total}")
    if not 0.0 <= dense_frac < 1.0:
        raise ParameterDomainError(f"dense_frac must lie in [0, 1), got {dense_frac}")
    b = _check_bounds(bounds)
    if dense_region is None:
        dense_region = b
    dr = _check_bounds(dense_region)
    if np.any(dr[:, 0] < b[:, 0]) or np.any(dr[:, 1] > b[:, 1]):
        raise ParameterDomainError("dense_region must lie inside bounds")
    rng = make_rng(seed, _DESIGN)

    n_dense = math.ceil(dense_frac * n_total) if dense_frac > 0 else 0
    n_lat = n_total - n_dense
    widths = b[:, 1] - b[:, 0]
    c = (n_lat / np.prod(widths)) ** (1.0 / 3.0)
    sides = np.maximum(1, np.floor(c * widths)).astype(int)
    while np.prod(sides) < n_lat:
        sides[np.argmax(widths / sides)] += 1
    cell = widths / sides
    idx = np.stack(np.meshgrid(*[np.arange(s) for s in sides], indexing="ij"),
                   axis=-1).reshape(-1, 3)
    keep = np.sort(rng.choice(idx.shape[0], size=n_lat, replace=False))
    centers = b[:, 0] + (idx[keep] + 0.5) * cell
    lattice = centers + rng.uniform(-0.05, 0.05, size=centers.shape) * cell
    dense = dr[:, 0] + rng.uniform(size=(n_dense, 3)) * (dr[:, 1] - dr[:, 0])
    return np.vstack([lattice, dense])


def toy_signal(theta, grids) -> dict:
    """Noiseless toy output for each row of ``theta``; dict of (n, m) arrays."""
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    if th.shape[1] != 3 or not np.all(np.isfinite(th)):
        raise ParameterDomainError("theta must be finite rows of (S, sqrt_Kv, F_aer)")
    if np.any(th[:, 1] < 0):
        raise ParameterDomainError("sqrt_Kv must be non-negative")
    S, kappa, F = th[:, 0], th[:, 1], th[:, 2]
    out = {}
    if SURFACE in grids:
        g = grids[SURFACE]
        zeta = np.deg2rad(g.z)
        a, bz = 0.5 + 0.5 * np.cos(zeta), 0.3 * np.cos(zeta)
        t = np.arange(1, g.t.size + 1)
        lam = 1.0 - np.exp(-t[None, :] / (1.0 + 2.0 * kappa[:, None]))
        f = (S[:, None, None] * lam[:, None, :] * a[None, :, None]
             + F[:, None, None] * bz[None, :, None])
        out[SURFACE] = f.reshape(th.shape[0], -1)
    if OCEAN in grids:
        out[OCEAN] = (0.05 * S * kappa / (1.0 + kappa) + 0.02 * F)[:, None]
    if UPPER_AIR in grids:
        g = grids[UPPER_AIR]
        zeta = np.deg2rad(g.z)
        a, bz = 0.5 + 0.5 * np.cos(zeta), 0.3 * np.cos(zeta)
        L = g.t.size
        lev = np.arange(L)
        c = np.cos(np.pi * lev / max(L - 1, 1)) - 0.3
        col = S[:, None] * a[None, :] + 0.5 * F[:, None] * bz[None, :]
        out[UPPER_AIR] = (col[:, :, None] * c[None, None, :]).reshape(th.shape[0], -1)
    return out


def _ar1_noise(rng, shape, scale):
    """AR(1) along the last axis with stationary marginal sd ``scale``."""
    e = rng.standard_normal(shape)
    x = np.empty(shape)
    x[..., 0] = e[..., 0]
    innov = math.sqrt(1.0 - AR_COEF ** 2)
    for k in range(1, shape[-1]):
        x[..., k] = AR_COEF * x[..., k - 1] + innov * e[..., k]
    return scale * x


def ar1_corr(n):
    k = np.arange(n)
    return AR_COEF ** np.abs(k[:, None] - k[None, :])


def toy_simulator(theta, grids=None, R=4, noise_scale=0.05, seed=0) -> dict:
    """Replicated toy output at the rows of ``theta``; dict of OutputEnsembles."""
    if R < 1:
        raise ParameterDomainError(f"R must be at least 1, got {R}")
    if noise_scale < 0:
        raise ParameterDomainError("noise_scale must be non-negative")
    grids = default_grids() if grids is None else grids
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    signal = toy_signal(th, grids)
    out = {}
    for k, name in enumerate(DATASETS):
        if name not in grids:
            continue
        g = grids[name]
        rng = make_rng(seed, _ENSEMBLE, k)
        noise = _ar1_noise(rng, (R, th.shape[0], g.dims[0], g.dims[1]), noise_scale)
        members = signal[name][None] + noise.reshape(R, th.shape[0], g.m)
        out[name] = OutputEnsemble(name, members, th, g)
    return out


def _neighbour_xi(grid: Grid) -> tuple:
    """Exponential (p=1) kernels with correlation 0.5 between grid neighbours."""
    specs = []
    for coords in (grid.z, grid.t):
        step = np.min(np.diff(np.sort(coords))) if coords.size > 1 else 1.0
        specs.append(KernelSpec.powexp([math.log(2.0) / abs(step)], [1.0]))
    return tuple(specs)


@dataclass(frozen=True)
class WorldConfig:
    """Everything needed to regenerate a synthetic calibration problem."""

    theta_true: tuple = (3.0, 1.0, -0.5)
    bounds: tuple = DEFAULT_BOUNDS
    n_design: int = 306
    dense_region: tuple = ((1.5, 5.0), (0.0, 3.0), (-1.0, 0.0))
    dense_frac: float = 0.4
    R: int = 4
    noise_scale: float = 0.05
    surface_dims: tuple = (4, 5)
    upper_dims: tuple = (26, 8)
    obs_tau: tuple = (("ocean", 0.01), ("surface", 0.05), ("upper_air", 0.05))
    seed: int = 0

    def grids(self) -> dict:
        return default_grids(self.surface_dims, self.upper_dims)

    def obs_covariances(self) -> dict:
        """Known observation-error covariance W for each dataset."""
        tau = dict(self.obs_tau)
        out = {}
        for name, g in self.grids().items():
            if g.m == 1:
                out[name] = np.array([[tau[name] ** 2]])
            else:
                kz, kt = _neighbour_xi(g)
                out[name] = tau[name] ** 2 * np.kron(corr_matrix(g.z, kz), corr_matrix(g.t, kt))
        return out

    def to_dict(self) -> dict:
        return {
            "theta_true": list(self.theta_true), "bounds": [list(b) for b in self.bounds],
            "n_design": self.n_design, "dense_region": [list(b) for b in self.dense_region],
            "dense_frac": self.dense_frac, "R": self.R, "noise_scale": self.noise_scale,
            "surface_dims": list(self.surface_dims), "upper_dims": list(self.upper_dims),
            "obs_tau": dict(self.obs_tau), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "WorldConfig":
        d = dict(d)
        tup = lambda v: tuple(tuple(x) if isinstance(x, list) else x for x in v)
        for key in ("theta_true", "surface_dims", "upper_dims"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("bounds", "dense_region"):
            if key in d:
                d[key] = tup(d[key])
        if "obs_tau" in d:
            d["obs_tau"] = tuple(sorted(dict(d["obs_tau"]).items()))
        return cls(**d)

    def with_seed(self, seed) -> "WorldConfig":
        return replace(self, seed=seed)


@dataclass(eq=False)
class ToyWorld:
    config: WorldConfig
    design: np.ndarray
    ensembles: dict
    observations: ObservationSet
    obs_cov: dict = field(default_factory=dict)

    @property
    def theta_true(self) -> np.ndarray:
        return np.asarray(self.config.theta_true, dtype=float)


def generate_world(config: WorldConfig = WorldConfig()) -> ToyWorld:
    """Design, replicated output and noisy observations at ``theta_true``."""
    b = _check_bounds(config.bounds)
    th = np.asarray(config.theta_true, dtype=float)
    if np.any(th <= b[:, 0]) or np.any(th >= b[:, 1]):
        raise ParameterDomainError("theta_true must lie inside bounds")
    grids = config.grids()
    design = sample_design(config.bounds, config.n_design, config.dense_region,
                           config.dense_frac, config.seed)
    ensembles = toy_simulator(design, grids, config.R, config.noise_scale, config.seed)
    truth = toy_signal(th, grids)
    W = config.obs_covariances()
    fields = {}
    for k, name in enumerate(DATASETS):
        rng = make_rng(config.seed, _OBS, k)
        Lw = np.linalg.cholesky(W[name])
        eps = Lw @ rng.standard_normal(grids[name].m)
        fields[name] = (truth[name][0] + eps).reshape(grids[name].dims)
    obs = ObservationSet(fields, dict(grids))
    return ToyWorld(config, design, ensembles, obs, W)


def theta_grid(bounds=DEFAULT_BOUNDS, step=0.1) -> list:
    """Axes of a regular grid with spacing ``step`` covering ``bounds``."""
    axes = []
    for lo, hi in bounds:
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        axes.append(lo + step * np.arange(n))
    return axes


def dense_mle_oracle(obs: ObservationSet, obs_cov: dict, axes, grids=None, chunk=8192):
    """Brute-force maximization of the naive likelihood over a parameter grid.

    Evaluates the Gaussian log-density of ``obs`` around the noiseless toy
    output with the known observation covariances, at every point of the
    Cartesian product of ``axes``.

    Returns
    -------
    theta_star : (3,) array
        Grid argmax.
    loglik : ndarray
        Log-likelihood surface shaped ``(len(axes[0]), len(axes[1]), len(axes[2]))``.
    """
    grids = obs.grids if grids is None else grids
    shape = tuple(len(a) for a in axes)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    names = [n for n in DATASETS if n in obs.fields]
    whiten = {}
    const = 0.0
    for name in names:
        W = np.asarray(obs_cov[name], dtype=float)
        Lw = np.linalg.cholesky(W)
        whiten[name] = (Lw, sla.solve_triangular(Lw, obs.vector(name), lower=True))
        const -= 0.5 * (W.shape[0] * math.log(2.0 * math.pi)
                        + 2.0 * np.log(np.diag(Lw)).sum())
    ll = np.full(pts.shape[0], const)
    sub = {n: grids[n] for n in names}
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        sig = toy_signal(block, sub)
        for name in names:
            Lw, wy = whiten[name]
            ws = sla.solve_triangular(Lw, sig[name].T, lower=True)
            r = wy[:, None] - ws
            ll[start:start + chunk] -= 0.5 * np.einsum("ij,ij->j", r, r)
    best = int(np.argmax(ll))
    return pts[best], ll.reshape(shape)


def refine_oracle(obs: ObservationSet, obs_cov: dict, start, bounds=DEFAULT_BOUNDS,
                  grids=None, max_evals=4000):
    """Polish a grid argmax into the continuous maximizer of the naive likelihood.

    Diagnostic companion to :func:`dense_mle_oracle`: when the likelihood is
    much narrower than the grid step along a tilted ridge, the grid argmax can
    sit several steps from the continuous optimum.
    """
    from surrocal.optimize import nelder_mead

    point = lambda th: dense_mle_oracle(obs, obs_cov, [np.array([v]) for v in th], grids)[1].item()
    res = nelder_mead(point, np.asarray(start, dtype=float), bounds,
                      max_evals=max_evals, tol=1e-10)
    return res.x, res.fun
