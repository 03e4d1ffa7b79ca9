"""Dense covariance linear algebra shared across the package.

Squared-exponential Gram matrices are close to singular whenever the
lengthscale exceeds the point spacing, so every factorisation of a
covariance matrix goes through :func:`chol_psd`, which adds a small
trace-scaled diagonal jitter and retries once with a larger one before
giving up.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

JITTER_SCALE = 1e-10
JITTER_RETRY_SCALE = 1e-8


class NumericalError(RuntimeError):
    """A factorisation or solve failed beyond what jitter can repair."""


def sym(mat: np.ndarray) -> np.ndarray:
    """Return the exactly symmetric part of a square matrix."""
    return 0.5 * (mat + mat.T)


def jitter_for(cov: np.ndarray, scale: float = JITTER_SCALE) -> float:
    """Trace-scaled diagonal jitter used before Cholesky factorisations."""
    n = cov.shape[0]
    return scale * float(np.trace(cov)) / n if n else 0.0


def chol_psd(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PSD matrix, with jitter retry.

    Factorises without jitter when the matrix is numerically positive
    definite (Cholesky is backward stable, so no regularisation is needed
    then), and climbs the jitter ladder only when the clean factorisation
    fails.  A zero matrix factors to zero; raises :class:`NumericalError`
    when the matrix is indefinite beyond the retry jitter.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    if not np.any(cov):
        return np.zeros_like(cov)
    eye = np.eye(n)
    for scale in (0.0, JITTER_SCALE, JITTER_RETRY_SCALE):
        try:
            return np.linalg.cholesky(cov + jitter_for(cov, scale) * eye if scale else cov)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"covariance of size {n} is not positive semi-definite up to jitter"
    )


def chol_solve(chol_lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``L L^T x = rhs`` by two triangular substitutions."""
    if not np.any(chol_lower):
        raise NumericalError("cannot solve against a zero Cholesky factor")
    y = solve_triangular(chol_lower, rhs, lower=True)
    return solve_triangular(chol_lower.T, y, lower=False)


def solve_psd(cov: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``cov x = rhs`` for a symmetric PSD ``cov`` via jittered Cholesky."""
    return chol_solve(chol_psd(cov), rhs)


def logdet_from_chol(chol_lower: np.ndarray) -> float:
    """log det of ``L L^T`` from its lower factor."""
    return 2.0 * float(np.sum(np.log(np.diag(chol_lower))))
