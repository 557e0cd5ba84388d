"""Parametric bootstrap of the calibration MLE and kernel-density summaries."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from surrocal import _backend
from surrocal.calibration import CalibrationConfig, CalibrationResult, maximize_likelihood
from surrocal.data import DATASETS, PARAM_NAMES, ObservationSet
from surrocal.errors import (BootstrapFailureError, DegenerateBandwidthError, ShapeError,
                             SurrocalError)
from surrocal.synthetic import make_rng
from surrocal.tensor_linalg import jittered_cholesky

log = logging.getLogger(__name__)

DEFAULT_B = 300
HPD_COVERAGES = (0.90, 0.95, 0.99)
MAX_FAILURE_FRAC = 0.10
_BOOT_STREAM = 4
# above this many kernel evaluations, densities at samples go through a grid
_EXACT_KDE_LIMIT = 4e7


def simulate_observations(fits: dict, calib: CalibrationResult, seed) -> ObservationSet:
    """Draw synthetic observations from the fitted observation model at the MLE.

    Each dataset gets ``Y ~ N(f_tilde(theta_hat), V(theta_hat) + tau^2 R1 kron R2)``;
    datasets are drawn in a fixed order from one stream of ``seed``.
    """
    rng = make_rng(seed, _BOOT_STREAM)
    theta = np.asarray(calib.theta_hat, dtype=float)
    fields, grids = {}, {}
    for name in DATASETS:
        if name not in fits or name not in calib.noise_hat.tau:
            continue
        fit = fits[name]
        mean, V = fit.moments(theta)
        rz, rt = calib.noise_hat.obs_correlation(name, fit.grid)
        tau = calib.noise_hat.tau[name]
        L, _ = jittered_cholesky(V + tau * tau * np.kron(rz, rt), name)
        y = mean + L @ rng.standard_normal(mean.size)
        fields[name] = y.reshape(fit.grid.dims)
        grids[name] = fit.grid
    return ObservationSet(fields, grids)


def replicate_seed(master_seed: int, b: int) -> int:
    """64-bit seed for replicate ``b``, split from ``master_seed`` by counter."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(_BOOT_STREAM, int(b)))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(eq=False)
class BootstrapSamples:
    """Replicate calibration results.

    ``rows[b]`` is ``None`` for a failed replicate, whose reason is in
    ``status[b]``.
    """

    rows: list
    status: list
    seeds: list
    master_seed: int
    requested: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> list:
        return [r for r in self.rows if r is not None]

    @property
    def B(self) -> int:
        return len(self.ok)

    @property
    def failures(self) -> list:
        return [(b, s) for b, s in enumerate(self.status) if s != "ok"]

    @property
    def theta(self) -> np.ndarray:
        return np.array([r.theta_hat for r in self.ok]).reshape(-1, len(PARAM_NAMES))

    def to_csv(self, path, datasets=DATASETS):
        """One row per replicate; failed rows carry empty values."""
        short = {"surface": "s", "ocean": "o", "upper_air": "u"}
        xi_cols = []
        ref = self.ok[0] if self.ok else None
        if ref is not None:
            for name in datasets:
                for axis, spec in zip("ZT", ref.noise_hat.xi.get(name, (None, None))):
                    if spec is not None:
                        xi_cols += [(name, axis, "eta"), (name, axis, "p")]
        header = ["b", *PARAM_NAMES] + [f"tau_{short[n]}" for n in datasets]
        header += [f"xi_{short[n]}_{a}_{k}" for n, a, k in xi_cols] + ["loglik", "status"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for b, (row, status) in enumerate(zip(self.rows, self.status)):
                if row is None:
                    w.writerow([b] + [""] * (len(header) - 2) + [status])
                    continue
                vals = [b, *(f"{v:.17g}" for v in row.theta_hat)]
                vals += [f"{row.noise_hat.tau.get(n, math.nan):.17g}" for n in datasets]
                for n, a, k in xi_cols:
                    spec = row.noise_hat.xi[n]["ZT".index(a)]
                    vals.append(f"{(spec.eta if k == 'eta' else spec.p)[0]:.17g}")
                vals += [f"{row.loglik:.17g}", status]
                w.writerow(vals)


# worker state for the process pool (set once per worker by the initializer)
_STATE = {}


def _init_worker(obs, fits, calib, config):
    _STATE.update(obs=obs, fits=fits, calib=calib, config=config)


def _replicate(args):
    b, seed = args
    fits, calib, config = _STATE["fits"], _STATE["calib"], _STATE["config"]
    try:
        y = simulate_observations(fits, calib, seed)
        res = maximize_likelihood(y, fits, config, warm_starts=(calib,))
    except (SurrocalError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return None, f"failed: {type(exc).__name__}: {exc}"
    return res, "ok"


def parametric_bootstrap(obs: ObservationSet, fits: dict, calib: CalibrationResult,
                         B: int = DEFAULT_B, master_seed: int = 0, workers: int = 1,
                         config: CalibrationConfig | None = None,
                         top_k: int = 1) -> BootstrapSamples:
    """Simulate from the fitted model at the MLE, re-maximize, repeat ``B`` times.

    Replicate ``b`` uses :func:`replicate_seed` ``(master_seed, b)`` so results
    do not depend on ``workers``.  Each re-maximization starts from the MLE and
    from the ``top_k`` best design points for the replicate data.

    Raises
    ------
    BootstrapFailureError
        If more than 10% of the replicates fail.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    config = replace(config or CalibrationConfig(), top_k=top_k)
    seeds = [replicate_seed(master_seed, b) for b in range(B)]
    tasks = list(enumerate(seeds))
    if workers <= 1:
        _init_worker(obs, fits, calib, config)
        out = [_replicate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(obs, fits, calib, config)) as pool:
            out = list(pool.map(_replicate, tasks, chunksize=max(1, B // (4 * workers))))
    rows = [r for r, _ in out]
    status = [s for _, s in out]
    samples = BootstrapSamples(rows, status, seeds, int(master_seed), B)
    n_fail = len(samples.failures)
    if n_fail > MAX_FAILURE_FRAC * B:
        raise BootstrapFailureError(f"{n_fail} of {B} bootstrap replicates failed",
                                    samples.failures)
    if n_fail:
        log.warning("%d of %d bootstrap replicates failed", n_fail, B)
    return samples


def silverman_bandwidth(x) -> float:
    """Silverman's rule ``0.9 min(sd, IQR/1.34) n^(-1/5)``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = sd
    if not spread > 0:
        raise DegenerateBandwidthError("samples have zero spread; give a bandwidth")
    return 0.9 * spread * x.size ** (-0.2)


def _bandwidths(samples, bandwidth):
    k = samples.shape[1]
    if bandwidth is None or (isinstance(bandwidth, str) and bandwidth == "auto"):
        return np.array([silverman_bandwidth(samples[:, j]) for j in range(k)])
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (k,)).copy()
    if np.any(h <= 0):
        raise DegenerateBandwidthError("bandwidths must be positive")
    return h


def kde_univariate(samples, eval_grid, bandwidth="auto") -> np.ndarray:
    """Gaussian kernel density ``(1/(n h)) sum phi((x - x_i)/h)`` on ``eval_grid``."""
    x = np.asarray(samples, dtype=float).reshape(-1, 1)
    if x.shape[0] < 2 and bandwidth in (None, "auto"):
        raise ValueError("need at least two samples")
    h = _bandwidths(x, bandwidth)
    g = np.asarray(eval_grid, dtype=float).reshape(-1, 1)
    return _backend.gauss_kde_eval(x, g, h)


def _gauss_matrix(grid, x, h):
    z = (grid[:, None] - x[None, :]) / h
    return np.exp(-0.5 * z * z) / (h * math.sqrt(2.0 * math.pi))


def kde_bivariate(samples, grid_x, grid_y, bandwidths="auto"):
    """Product-Gaussian kernel density on the grid ``grid_x`` by ``grid_y``.

    Returns
    -------
    density : (len(grid_x), len(grid_y)) array
    h : (2,) array
        Bandwidths used.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[1] != 2:
        raise ShapeError(f"samples must be (n, 2), got {s.shape}")
    h = _bandwidths(s, bandwidths)
    gx = np.asarray(grid_x, dtype=float)
    gy = np.asarray(grid_y, dtype=float)
    # separable kernel: one matrix product instead of a double sum
    dens = _gauss_matrix(gx, s[:, 0], h[0]) @ _gauss_matrix(gy, s[:, 1], h[1]).T
    return dens / s.shape[0], h


def density_at_samples(samples, bandwidths="auto", grid_size=256, exact=None):
    """KDE evaluated at the samples themselves.

    Small problems are summed exactly; large ones are evaluated on a grid
    padded by four bandwidths and interpolated bilinearly.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    h = _bandwidths(s, bandwidths)
    n = s.shape[0]
    if exact is None:
        exact = s.shape[1] > 2 or float(n) * n <= _EXACT_KDE_LIMIT
    if exact:
        return _backend.gauss_kde_eval(s, s, h)
    axes = [np.linspace(s[:, j].min() - 4 * h[j], s[:, j].max() + 4 * h[j], grid_size)
            for j in range(s.shape[1])]
    if s.shape[1] == 1:
        return np.interp(s[:, 0], axes[0], kde_univariate(s[:, 0], axes[0], h[0]))
    dens, _ = kde_bivariate(s, axes[0], axes[1], h)
    return RegularGridInterpolator(axes, dens)(s)


def hpd_region_level(samples, density_at_samples, coverage: float) -> float:
    """Density threshold whose super-level set holds ``coverage`` of the samples.

    ``samples`` is accepted for interface symmetry; only the density values
    enter the ``(1 - coverage)`` empirical quantile.
    """
    if not 0.0 < coverage < 1.0:
        raise ValueError("coverage must lie in (0, 1)")
    d = np.asarray(density_at_samples, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("no samples")
    return float(np.quantile(d, 1.0 - coverage))


def percentile_ci(samples, level: float = 0.99) -> tuple[float, float]:
    """Equal-tail percentile interval with linear interpolation of order statistics."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    x = np.sort(x)
    n = x.size

    def at(q):
        # plotting position (k-1)/(n-1); snap so that e.g. 0.05*100 hits order stat 5 exactly
        pos = q * (n - 1)
        if abs(pos - round(pos)) < 1e-9:
            return float(x[int(round(pos))])
        k = int(math.floor(pos))
        frac = pos - k
        return float(x[k] + frac * (x[k + 1] - x[k]))

    return at((1.0 - level) / 2.0), at((1.0 + level) / 2.0)


def write_density(path_prefix, axes, density, levels: dict, bandwidths, names, extra=None):
    """Write ``<prefix>.csv`` (long format over the grid) and a ``<prefix>.json`` sidecar.

    ``axes`` holds one grid per variable (one or two); ``density`` is shaped
    by their lengths.
    """
    mesh = np.meshgrid(*axes, indexing="ij")
    cols = [m.ravel() for m in mesh] + [np.asarray(density).ravel()]
    with open(f"{path_prefix}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "density"])
        for row in zip(*cols):
            w.writerow([f"{v:.17g}" for v in row])
    meta = {"levels": {f"{k:.2f}": float(v) for k, v in levels.items()},
            "bandwidths": [float(v) for v in np.atleast_1d(bandwidths)],
            "variables": list(names)}
    if extra:
        meta.update(extra)
    with open(f"{path_prefix}.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
