"""Pure numpy implementations of the pairwise kernels.

Same signatures as the compiled ``_ckernels`` module; selected by
:mod:`surrocal._backend` when the extension is unavailable.
"""

import numpy as np

SQRT3 = np.sqrt(3.0)
_KDE_CHUNK = 2048


def powexp_cross(X1, X2, eta, p):
    """exp(-sum_k eta_k |x1_k - x2_k|^p_k) for all row pairs."""
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    out = np.zeros((X1.shape[0], X2.shape[0]))
    for k in range(X1.shape[1]):
        lag = np.abs(X1[:, k, None] - X2[None, :, k])
        if p[k] == 1.0:
            out += eta[k] * lag
        elif p[k] == 2.0:
            out += eta[k] * lag * lag
        else:
            out += eta[k] * lag ** p[k]
    return np.exp(-out)


def matern32_cross(X1, X2, alpha):
    """Product over dimensions of (1 + sqrt3 h/a) exp(-sqrt3 h/a)."""
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    out = np.ones((X1.shape[0], X2.shape[0]))
    for k in range(X1.shape[1]):
        r = SQRT3 * np.abs(X1[:, k, None] - X2[None, :, k]) / alpha[k]
        out *= (1.0 + r) * np.exp(-r)
    return out


def gauss_kde_eval(samples, points, h):
    """Product-Gaussian kernel density of ``samples`` evaluated at ``points``.

    ``samples`` is (n, k), ``points`` is (q, k) and ``h`` holds the k
    bandwidths. Work is chunked over points to bound memory.
    """
    samples = np.asarray(samples, dtype=float)
    points = np.asarray(points, dtype=float)
    h = np.asarray(h, dtype=float)
    n, k = samples.shape
    norm = 1.0 / (n * np.prod(h) * (2.0 * np.pi) ** (k / 2.0))
    zs = samples / h
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], _KDE_CHUNK):
        zp = points[start:start + _KDE_CHUNK] / h
        d2 = np.zeros((zp.shape[0], n))
        for j in range(k):
            diff = zp[:, j, None] - zs[None, :, j]
            d2 += diff * diff
        out[start:start + _KDE_CHUNK] = np.exp(-0.5 * d2).sum(axis=1)
    return out * norm
