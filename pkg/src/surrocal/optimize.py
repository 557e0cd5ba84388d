"""Nelder-Mead direct search on box-bounded parameters.

Bounded coordinates are mapped to the real line before the simplex sees them:
a logistic map for finite boxes, a log map for one-sided bounds and the
identity for unbounded coordinates.  The simplex therefore never proposes an
infeasible point, and optima on a bound are reached by saturation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from surrocal.errors import InitializationError, ShapeError

log = logging.getLogger(__name__)

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5
_EDGE = 1e-12


class BoxTransform:
    """Elementwise bijection between a box and R^n."""

    def __init__(self, bounds):
        b = np.asarray(bounds, dtype=float).reshape(-1, 2)
        self.lo, self.hi = b[:, 0].copy(), b[:, 1].copy()
        if np.any(self.lo >= self.hi):
            raise ValueError("each bound needs lo < hi")
        self.kind = np.where(
            np.isfinite(self.lo) & np.isfinite(self.hi), 2,
            np.where(np.isfinite(self.lo), 1, np.where(np.isfinite(self.hi), -1, 0)))

    def to_free(self, x):
        x = np.asarray(x, dtype=float)
        u = x.copy()
        for i, k in enumerate(self.kind):
            lo, hi = self.lo[i], self.hi[i]
            if k == 2:
                width = hi - lo
                s = np.clip((x[i] - lo) / width, _EDGE, 1.0 - _EDGE)
                u[i] = math.log(s / (1.0 - s))
            elif k == 1:
                u[i] = math.log(max(x[i] - lo, _EDGE))
            elif k == -1:
                u[i] = math.log(max(hi - x[i], _EDGE))
        return u

    def to_box(self, u):
        u = np.asarray(u, dtype=float)
        x = u.copy()
        for i, k in enumerate(self.kind):
            lo, hi = self.lo[i], self.hi[i]
            if k == 2:
                # numerically stable logistic
                if u[i] >= 0:
                    s = 1.0 / (1.0 + math.exp(-u[i]))
                else:
                    e = math.exp(u[i])
                    s = e / (1.0 + e)
                x[i] = lo + (hi - lo) * s
            elif k == 1:
                x[i] = lo + math.exp(min(u[i], 700.0))
            elif k == -1:
                x[i] = hi - math.exp(min(u[i], 700.0))
        return x


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nfev: int
    nit: int
    restarts: int
    converged: bool


def _simplex_search(g, simplex, fvals, tol, budget):
    """Minimize ``g`` from an initial simplex; returns (simplex, fvals, nfev, nit, converged)."""
    n = simplex.shape[1]
    nfev = 0
    nit = 0
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if fvals[-1] - fvals[0] < tol:
            return simplex, fvals, nfev, nit, True
        if nfev >= budget:
            return simplex, fvals, nfev, nit, False
        nit += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + REFLECT * (centroid - worst)
        fr = g(xr)
        nfev += 1
        if fr < fvals[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = g(xe)
            nfev += 1
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + CONTRACT * (xr - centroid)
                fc = g(xc)
                nfev += 1
                accept = fc <= fr
            else:
                xc = centroid + CONTRACT * (worst - centroid)
                fc = g(xc)
                nfev += 1
                accept = fc < fvals[-1]
            if accept:
                simplex[-1], fvals[-1] = xc, fc
            else:
                best = simplex[0]
                for i in range(1, n + 1):
                    simplex[i] = best + SHRINK * (simplex[i] - best)
                    fvals[i] = g(simplex[i])
                nfev += n


def nelder_mead(objective, x0, bounds, max_evals=2000, tol=1e-8, restarts=1,
                seed=0, step=0.5, maximize=True):
    """Optimize ``objective`` over a box with restarted Nelder-Mead.

    Parameters
    ----------
    objective : callable
        Maps a parameter vector (in box coordinates) to a float.  Non-finite
        values are treated as infeasible.
    x0 : array_like
        Starting point inside ``bounds``.
    bounds : sequence of (lo, hi)
        Per-coordinate bounds; ``-inf``/``inf`` allowed.
    max_evals : int
        Total evaluation budget shared by all restarts.
    tol : float
        Stop when the spread of objective values over the simplex falls
        below this.
    restarts : int
        Number of additional runs from a randomly perturbed best point.
    seed : int
        Seed for the restart perturbations.
    step : float
        Initial simplex edge in transformed coordinates.
    maximize : bool
        Maximize (default) or minimize.

    Returns
    -------
    OptimizeResult
        ``x`` in box coordinates and ``fun`` on the objective's own scale.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    tf = BoxTransform(bounds)
    if tf.lo.size != x0.size:
        raise ShapeError(f"{x0.size} parameters but {tf.lo.size} bounds")
    sign = -1.0 if maximize else 1.0

    def g(u):
        try:
            v = float(objective(tf.to_box(u)))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.debug("objective failed at %s: %s", u, exc)
            return math.inf
        return sign * v if math.isfinite(v) else math.inf

    n = x0.size
    rng = np.random.Generator(np.random.Philox(seed))
    u0 = tf.to_free(x0)

    def initial_simplex(center, scale):
        S = np.tile(center, (n + 1, 1))
        for i in range(n):
            S[i + 1, i] += scale[i]
        return S

    simplex = initial_simplex(u0, np.full(n, step))
    fvals = np.array([g(u) for u in simplex])
    nfev = n + 1
    if not np.any(np.isfinite(fvals)):
        raise InitializationError("objective is not finite anywhere on the initial simplex")

    nit_total = 0
    converged = False
    done_restarts = 0
    for attempt in range(restarts + 1):
        if attempt > 0:
            if nfev + n + 1 > max_evals:
                break
            best = simplex[0]
            scale = step * rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.5, 1.5, size=n)
            simplex = initial_simplex(best, scale)
            fvals = np.concatenate([[fvals[0]], [g(u) for u in simplex[1:]]])
            nfev += n
            done_restarts += 1
        simplex, fvals, used, nit, converged = _simplex_search(
            g, simplex, fvals, tol, max_evals - nfev)
        nfev += used
        nit_total += nit
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]

    if not math.isfinite(fvals[0]):
        raise InitializationError("no finite objective value found")
    return OptimizeResult(tf.to_box(simplex[0]), sign * float(fvals[0]), nfev,
                          nit_total, done_restarts, converged)
