"""Kronecker-structured solves and log-determinants.

Stacking convention (used everywhere in the package): a field indexed by
parameter ``d``, space ``z`` and time ``t`` lives at position
``d*N_Z*N_T + z*N_T + t`` -- parameter index slowest, time fastest.  This is
the ordering produced by ``np.kron(C_theta, np.kron(C_Z, C_T))`` and by
C-order reshaping of a ``(D, N_Z, N_T)`` array.

The covariance handled here is

    Sigma = sigma2 * (C_theta kron K) + omega2 * (I kron Gamma)

with ``K = C_Z kron C_T``.  With ``Gamma = L L'`` and ``M = L^-1 K L^-T`` we get

    Sigma = (I kron L)(U kron V)(sigma2 lam kron mu + omega2)(U kron V)'(I kron L')

where ``C_theta = U diag(lam) U'`` and ``M = V diag(mu) V'``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from surrocal.errors import ShapeError, SingularCovarianceError

log = logging.getLogger(__name__)

JITTER_LADDER = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
CLAMP_RTOL = 1e-10
NUGGET_RTOL = 1e-12
SYMMETRY_RTOL = 1e-10


def kron_apply(factors, x):
    """Apply ``A1 kron A2 kron ...`` to ``x`` without forming the product.

    ``x`` may be a vector or a matrix whose columns are transformed
    independently.
    """
    factors = [np.asarray(f, dtype=float) for f in factors]
    x = np.asarray(x, dtype=float)
    for f in factors:
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ShapeError(f"Kronecker factors must be square, got {f.shape}")
    dims = [f.shape[0] for f in factors]
    n = int(np.prod(dims))
    if x.shape[0] != n:
        raise ShapeError(f"vector length {x.shape[0]} != product of factor orders {n}")
    extra = x.shape[1:]
    t = x.reshape(tuple(dims) + extra)
    for axis, f in enumerate(factors):
        t = np.moveaxis(np.tensordot(f, t, axes=([1], [axis])), 0, axis)
    return t.reshape(x.shape)


def _check_symmetric(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {A.shape}")
    scale = max(np.abs(A).max(), 1.0) if A.size else 1.0
    if np.abs(A - A.T).max(initial=0.0) > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (A + A.T)


def clamped_eigh(A, name="matrix"):
    """Symmetric eigendecomposition with small negative eigenvalues set to 0."""
    w, V = np.linalg.eigh(A)
    top = max(w[-1], 0.0) if w.size else 0.0
    if w.size and w[0] < -CLAMP_RTOL * top:
        raise SingularCovarianceError(
            f"{name} is indefinite: smallest eigenvalue {w[0]:.3e}",
            min_eigenvalue=float(w[0]))
    return np.maximum(w, 0.0), V


def jittered_cholesky(A, name="matrix"):
    """Lower Cholesky factor of ``A + eps*s*I`` with ``eps`` escalating 1e-12 -> 1e-6.

    ``s`` is the mean diagonal of ``A``.  Returns ``(L, eps)``; ``eps`` is 0
    when no jitter was needed.
    """
    A = np.asarray(A, dtype=float)
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = np.mean(np.diag(A)) if A.size else 1.0
    if not scale > 0:
        scale = 1.0
    eye = np.eye(A.shape[0])
    for eps in JITTER_LADDER:
        try:
            L = np.linalg.cholesky(A + eps * scale * eye)
        except np.linalg.LinAlgError:
            continue
        log.debug("%s needed jitter %.0e", name, eps)
        return L, eps
    wmin = float(np.linalg.eigvalsh(A)[0])
    raise SingularCovarianceError(
        f"{name} not factorizable at jitter {JITTER_LADDER[-1]:.0e}; "
        f"smallest eigenvalue {wmin:.3e}", min_eigenvalue=wmin)


@dataclass(frozen=True, eq=False)
class StructuredFactor:
    """Decomposition of ``sigma2 (C_theta kron K) + omega2 (I kron Gamma)``.

    ``jitter`` is the relative amount added to Gamma before its Cholesky
    factorization; ``nugget`` is added to the combined eigenvalues (i.e. it
    acts like extra ``omega2``) when they are too small to invert stably.
    """

    eigvectors_theta: np.ndarray
    eigvals_theta: np.ndarray
    whitener: np.ndarray
    eigvectors_inner: np.ndarray
    eigvals_inner: np.ndarray
    sigma2: float
    omega2: float
    jitter: float
    nugget: float
    combined: np.ndarray  # (D, m) array sigma2*lam_i*mu_j + omega2 + nugget
    right: np.ndarray  # L^-T V, maps whitened coordinates back

    @property
    def D(self) -> int:
        return self.eigvals_theta.shape[0]

    @property
    def m(self) -> int:
        return self.eigvals_inner.shape[0]

    @property
    def size(self) -> int:
        return self.D * self.m

    def _as_matrix(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.size:
            raise ShapeError(f"rhs length {rhs.shape[0]} != D*m = {self.size}")
        return rhs.reshape((self.D, self.m) + rhs.shape[1:])

    def to_eigen(self, rhs):
        """Coordinates ``(U kron V)'(I kron L^-1) rhs`` as a (D, m, ...) array."""
        R = self._as_matrix(rhs)
        U, W = self.eigvectors_theta, self.right
        if R.ndim == 2:
            return U.T @ R @ W
        return np.einsum("di,dj...,jk->ik...", U, R, W, optimize=True)

    def solve(self, rhs):
        """Return ``Sigma^-1 rhs`` for the (jittered) factored matrix."""
        Z = self.to_eigen(rhs)
        U, W = self.eigvectors_theta, self.right
        if Z.ndim == 2:
            out = U @ (Z / self.combined) @ W.T
        else:
            Z = Z / self.combined.reshape(self.combined.shape + (1,) * (Z.ndim - 2))
            out = np.einsum("di,ij...,kj->dk...", U, Z, W, optimize=True)
        return out.reshape(np.shape(rhs))

    def matvec(self, x):
        """Return ``Sigma x`` using the factored representation."""
        R = self._as_matrix(x)
        U = self.eigvectors_theta
        P = self.whitener @ self.eigvectors_inner
        if R.ndim != 2:
            return np.stack([self.matvec(col) for col in np.moveaxis(
                np.asarray(x, dtype=float), -1, 0)], axis=-1)
        Z = U.T @ R @ P
        return (U @ (Z * self.combined) @ P.T).reshape(np.shape(x))

    def quad_form(self, x) -> float:
        Z = self.to_eigen(x)
        return float(np.sum(Z * Z / self.combined))

    def logdet(self) -> float:
        if np.any(self.combined <= 0):
            raise SingularCovarianceError(
                "nonpositive combined eigenvalue", float(self.combined.min()))
        return float(2.0 * self.D * np.log(np.diag(self.whitener)).sum()
                     + np.log(self.combined).sum())

    def dense(self) -> np.ndarray:
        """Reconstruct the full matrix (for testing only)."""
        U = self.eigvectors_theta
        P = self.whitener @ self.eigvectors_inner
        UP = np.kron(U, P)
        return (UP * self.combined.ravel()) @ UP.T


@dataclass(frozen=True, eq=False)
class DenseFactor:
    """Dense Cholesky of the same covariance; the reference path."""

    chol: np.ndarray
    jitter: float
    nugget: float = 0.0

    @property
    def size(self) -> int:
        return self.chol.shape[0]

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.size:
            raise ShapeError(f"rhs length {rhs.shape[0]} != {self.size}")
        return sla.cho_solve((self.chol, True), rhs)

    def matvec(self, x):
        return self.chol @ (self.chol.T @ np.asarray(x, dtype=float))

    def quad_form(self, x) -> float:
        z = sla.solve_triangular(self.chol, np.asarray(x, dtype=float), lower=True)
        return float(z @ z)

    def logdet(self) -> float:
        return float(2.0 * np.log(np.diag(self.chol)).sum())

    def dense(self) -> np.ndarray:
        return self.chol @ self.chol.T


def dense_covariance(C_theta, K, Gamma, sigma2, omega2):
    D = C_theta.shape[0]
    return sigma2 * np.kron(C_theta, K) + omega2 * np.kron(np.eye(D), Gamma)


def structured_factorize(C_theta, K, Gamma, sigma2, omega2, dense_fallback=False):
    """Factor ``sigma2 (C_theta kron K) + omega2 (I kron Gamma)``.

    Parameters
    ----------
    C_theta : (D, D) array
        Parameter-space correlation matrix.
    K : (m, m) array
        Field correlation, normally ``C_Z kron C_T``.
    Gamma : (m, m) array
        Noise covariance shape (symmetric PSD).
    sigma2, omega2 : float
        Non-negative variance scales, not both zero.
    dense_fallback : bool
        Materialize the ``Dm x Dm`` matrix and use a dense Cholesky instead.

    Returns
    -------
    StructuredFactor or DenseFactor
    """
    C_theta = _check_symmetric(C_theta, "C_theta")
    K = _check_symmetric(K, "K")
    Gamma = _check_symmetric(Gamma, "Gamma")
    if K.shape != Gamma.shape:
        raise ShapeError(f"K {K.shape} and Gamma {Gamma.shape} differ")
    sigma2 = float(sigma2)
    omega2 = float(omega2)
    if sigma2 < 0 or omega2 < 0 or not sigma2 + omega2 > 0:
        raise ValueError(f"need sigma2, omega2 >= 0 with positive sum ({sigma2}, {omega2})")

    if dense_fallback:
        S = dense_covariance(C_theta, K, Gamma, sigma2, omega2)
        L, eps = jittered_cholesky(S, "covariance")
        return DenseFactor(L, eps)

    L, eps = jittered_cholesky(Gamma, "Gamma")
    lam, U = clamped_eigh(C_theta, "C_theta")
    Linv_K = sla.solve_triangular(L, K, lower=True)
    M = sla.solve_triangular(L, Linv_K.T, lower=True)
    mu, V = clamped_eigh(0.5 * (M + M.T), "whitened K")
    combined = sigma2 * np.outer(lam, mu) + omega2
    scale = sigma2 * lam.mean() * mu.mean() + omega2
    nugget = 0.0
    if combined.min() < NUGGET_RTOL * scale:
        nugget = NUGGET_RTOL * scale
        combined = combined + nugget
        log.debug("combined spectrum floored with nugget %.3e", nugget)
    W = sla.solve_triangular(L, V, lower=True, trans="T")
    return StructuredFactor(U, lam, L, V, mu, sigma2, omega2, eps, nugget, combined, W)


def structured_solve(factor, rhs):
    return factor.solve(rhs)


def structured_logdet(factor) -> float:
    return factor.logdet()
