"""Multiresolution regularization of a space-time noise covariance.

The basis is a tensor product of 1-d Haar bases.  Grid sizes that are not a
power of two are handled by reflection padding: the Haar analysis functionals
of the padded grid are pulled back onto the observed cells and
re-orthonormalized coarse-to-fine, giving an orthonormal basis whose leading
vectors are the coarse-scale Haar functions.
"""

from __future__ import annotations

import logging

import numpy as np

from surrocal.errors import DegenerateCovarianceError, ParameterDomainError, ShapeError

log = logging.getLogger(__name__)


def haar_matrix(n: int) -> np.ndarray:
    """Orthonormal Haar analysis matrix of order ``n`` (a power of two).

    Rows are ordered coarse to fine: the constant, then scales from
    coarsest to finest.
    """
    if n < 1 or n & (n - 1):
        raise ValueError(f"Haar order must be a power of two, got {n}")
    H = np.ones((1, 1))
    while H.shape[0] < n:
        k = H.shape[0]
        top = np.kron(H, [1.0, 1.0])
        bottom = np.kron(np.eye(k), [1.0, -1.0])
        H = np.vstack([top, bottom]) / np.sqrt(2.0)
    return H


def reflection_extension(n: int, size: int) -> np.ndarray:
    """(size, n) matrix extending a length-n signal to ``size`` by mirroring."""
    E = np.zeros((size, n))
    period = 2 * n
    for i in range(size):
        j = i % period
        E[i, j if j < n else period - 1 - j] = 1.0
    return E


def haar_basis_1d(n: int) -> np.ndarray:
    """Orthonormal (n, n) basis; columns are basis functions on the n cells."""
    if n == 1:
        return np.ones((1, 1))
    size = 1 << (n - 1).bit_length()
    H = haar_matrix(size)
    candidates = (H @ reflection_extension(n, size)).T  # (n, size), coarse to fine
    basis = []
    for col in candidates.T:
        v = col.copy()
        for b in basis:
            v -= (b @ v) * b
        # second pass keeps Gram-Schmidt orthogonal to working precision
        for b in basis:
            v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-10 * max(np.linalg.norm(col), 1.0):
            basis.append(v / nv)
        if len(basis) == n:
            break
    return np.column_stack(basis)


def multiresolution_basis(n_z: int, n_t: int) -> np.ndarray:
    """Orthonormal (m, m) basis on the (n_z, n_t) grid, time index fastest."""
    return np.kron(haar_basis_1d(n_z), haar_basis_1d(n_t))


def threshold_symmetric(H, frac: float, exempt_diagonal: bool = True):
    """Zero the smallest ``frac`` fraction of entries of symmetric ``H``.

    Entries are ranked by absolute value over the upper triangle, so each
    symmetric pair is kept or dropped together.  With ``exempt_diagonal`` the
    diagonal is never zeroed and the fraction counts off-diagonal pairs only.
    """
    if not 0.0 <= frac <= 1.0:
        raise ParameterDomainError(f"threshold fraction must lie in [0, 1], got {frac}")
    m = H.shape[0]
    iu = np.triu_indices(m, k=1 if exempt_diagonal else 0)
    n_zero = int(round(frac * iu[0].size))
    out = H.copy()
    if n_zero == 0:
        return out
    order = np.argsort(np.abs(H[iu]), kind="stable")[:n_zero]
    rows, cols = iu[0][order], iu[1][order]
    out[rows, cols] = 0.0
    out[cols, rows] = 0.0
    return out


def wavelet_regularized_cov(residuals, dims, threshold_frac: float = 0.9,
                            exempt_diagonal: bool = True) -> np.ndarray:
    """Thresholded multiresolution estimate of a field covariance.

    Parameters
    ----------
    residuals : (n, m) array
        Centered fields (per-design replicate mean already removed).
    dims : (n_z, n_t)
        Grid shape with ``n_z * n_t == m``.
    threshold_frac : float
        Fraction of the square-root coefficient covariance set to zero.

    Returns
    -------
    (m, m) array
        Symmetric PSD matrix scaled to trace ``m``.
    """
    R = np.asarray(residuals, dtype=float)
    n_z, n_t = dims
    m = n_z * n_t
    if R.ndim != 2 or R.shape[1] != m:
        raise ShapeError(f"residuals must be (n, {m}), got {R.shape}")
    if not 0.0 <= threshold_frac <= 1.0:
        raise ParameterDomainError(f"threshold fraction must lie in [0, 1], got {threshold_frac}")
    if R.shape[0] < m:
        log.warning("only %d residual fields for a %d-dim covariance", R.shape[0], m)

    S = R.T @ R / R.shape[0]
    B = multiresolution_basis(n_z, n_t)
    Dc = B.T @ S @ B
    w, V = np.linalg.eigh(0.5 * (Dc + Dc.T))
    Hm = (V * np.sqrt(np.maximum(w, 0.0))) @ V.T
    Hm = 0.5 * (Hm + Hm.T)
    Ht = threshold_symmetric(Hm, threshold_frac, exempt_diagonal)
    G0 = B @ (Ht @ Ht) @ B.T
    G0 = 0.5 * (G0 + G0.T)
    tr = np.trace(G0)
    if not tr > 0:
        raise DegenerateCovarianceError("residual covariance has zero trace")
    return G0 * (m / tr)
