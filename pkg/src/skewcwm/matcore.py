"""Small dense SPD linear algebra: Cholesky, quadratic forms, determinants."""

from __future__ import annotations

import numpy as np
from scipy import linalg

JITTER = 1e-8


class NotSPDError(np.linalg.LinAlgError):
    """Raised when a matrix is not symmetric positive definite."""


def _check_square(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {sigma.shape}")
    return sigma


def cholesky(sigma, regularize: bool = False):
    """Lower Cholesky factor of ``sigma``.

    With ``regularize=True`` a failed factorisation is retried once after adding
    ``1e-8 * trace/dim`` to the diagonal.

    Returns
    -------
    L : ndarray
    regularized : bool
        Whether the diagonal jitter was applied.
    """
    sigma = _check_square(sigma)
    if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-12 * np.abs(sigma).max(initial=0.0)):
        raise NotSPDError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(sigma), False
    except np.linalg.LinAlgError:
        if not regularize:
            raise NotSPDError("matrix is not positive definite") from None
    dim = sigma.shape[0]
    bump = JITTER * max(np.trace(sigma) / dim, np.finfo(float).tiny)
    try:
        return np.linalg.cholesky(sigma + bump * np.eye(dim)), True
    except np.linalg.LinAlgError:
        raise NotSPDError("matrix is not positive definite after regularisation") from None


def quad_form_chol(diff, L):
    """Rows of ``diff`` mapped to ``d' Sigma^-1 d`` given ``L = chol(Sigma)``."""
    diff = np.atleast_2d(diff)
    sol = linalg.solve_triangular(L, diff.T, lower=True, check_finite=False)
    return np.einsum("ij,ij->j", sol, sol)


def mahalanobis(x, mu, sigma):
    """Squared Mahalanobis distance ``(x-mu)' Sigma^-1 (x-mu)``.

    ``x`` may be a vector or an ``(n, p)`` array of rows; the result is a float
    or an ``(n,)`` array accordingly.
    """
    sigma = _check_square(sigma)
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if x.shape[-1] != sigma.shape[0] or mu.shape[-1] != sigma.shape[0]:
        raise ValueError("dimension mismatch between point, location and scatter")
    L, _ = cholesky(sigma)
    out = np.maximum(quad_form_chol(x - mu, L), 0.0)
    return float(out[0]) if x.ndim == 1 else out


def skew_norm(alpha, sigma) -> float:
    """``alpha' Sigma^-1 alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    return mahalanobis(alpha, np.zeros_like(alpha), sigma)


def log_det_spd(sigma) -> float:
    L, _ = cholesky(sigma)
    return log_det_chol(L)


def log_det_chol(L) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def solve_spd(sigma, rhs):
    """Solve ``sigma @ X = rhs`` through the Cholesky factor."""
    L, _ = cholesky(sigma)
    return linalg.cho_solve((L, True), np.asarray(rhs, dtype=float), check_finite=False)


def design_rows(x):
    """Prepend the intercept column: rows ``x* = (1, x')'``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.hstack([np.ones((x.shape[0], 1)), x])
