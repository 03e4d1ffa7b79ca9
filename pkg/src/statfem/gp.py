"""Squared-exponential Gaussian process machinery.

Covariance construction, conditioning on prescribed anchor values,
Cholesky-based sampling and the interpolating basis functions obtained by
conditioning a zero-mean process on anchor coefficients.  The kernel family
is fixed to the squared exponential; the types carry no kernel tag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import NumericalError, chol_psd, chol_solve, jitter_for, sym


@dataclass(frozen=True)
class SqExpKernel:
    """Squared-exponential kernel with scaling ``sigma`` and lengthscale ``ell``."""

    sigma: float
    ell: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"kernel sigma must be positive, got {self.sigma}")
        if not self.ell > 0:
            raise ValueError(f"kernel lengthscale must be positive, got {self.ell}")


@dataclass(frozen=True)
class RandomFieldSpec:
    """Gaussian random field: a mean function plus a squared-exponential kernel.

    ``mean_fn`` maps an ``(n, d)`` coordinate array to ``n`` field values;
    scalar returns broadcast to all points.  ``kernel=None`` marks a
    deterministic field (zero covariance everywhere).
    """

    mean_fn: Callable[[np.ndarray], np.ndarray]
    kernel: SqExpKernel | None

    def mean_at(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points)
        vals = np.asarray(self.mean_fn(pts), dtype=float)
        if vals.ndim == 0:
            return np.full(len(pts), float(vals))
        return vals.reshape(len(pts))


def constant_mean(value: float) -> Callable[[np.ndarray], np.ndarray]:
    """Mean function returning ``value`` everywhere."""
    return lambda pts: np.full(len(pts), float(value))


@dataclass(frozen=True)
class GaussianDensity:
    """Multivariate Gaussian with mean vector and covariance matrix.

    The universal currency of the pipeline: random source and diffusivity
    vectors, forward solutions, posteriors and predictive densities are all
    instances.  The covariance is symmetrised on construction and must be
    PSD up to the jitter tolerance used by the factorisation helpers.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError(f"covariance must be square, got shape {cov.shape}")
        if mean.shape[0] != cov.shape[0]:
            raise ValueError(
                f"mean of length {mean.shape[0]} does not match covariance "
                f"of size {cov.shape[0]}"
            )
        scale = max(np.abs(cov).max(), 1.0)
        if np.abs(cov - cov.T).max() > 1e-8 * scale:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", sym(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def variances(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def as_points(points) -> np.ndarray:
    """Coerce coordinates to an ``(n, d)`` float array (1D inputs get d=1)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"coordinates must be at most 2-d, got shape {arr.shape}")
    return arr


def kernel_eval(kernel: SqExpKernel, x, x2) -> float:
    """Kernel value ``sigma^2 exp(-||x - x2||^2 / (2 ell^2))``."""
    a = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(x2, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"coordinate dimensions differ: {a.shape} vs {b.shape}")
    r2 = float(np.sum((a - b) ** 2))
    return kernel.sigma**2 * float(np.exp(-r2 / (2.0 * kernel.ell**2)))


def cov_matrix(points, kernel: SqExpKernel, points2=None) -> np.ndarray:
    """Kernel Gram matrix of one point set (or cross-covariance of two).

    The single-set result is exactly symmetric with ``sigma^2`` on the
    diagonal: the squared-distance matrix is computed by broadcasting, which
    is bitwise symmetric with an exactly zero diagonal.
    """
    pts = as_points(points)
    other = pts if points2 is None else as_points(points2)
    if pts.shape[1] != other.shape[1]:
        raise ValueError("point sets have different dimensions")
    diff = pts[:, None, :] - other[None, :, :]
    r2 = np.sum(diff * diff, axis=2)
    return kernel.sigma**2 * np.exp(-r2 / (2.0 * kernel.ell**2))


def gp_condition(
    prior_mean_a: np.ndarray,
    prior_mean_c: np.ndarray,
    k_aa: np.ndarray,
    k_ac: np.ndarray,
    k_cc: np.ndarray,
    anchor_values: np.ndarray,
) -> GaussianDensity:
    """Condition a joint Gaussian on prescribed values at the anchor block.

    Returns the density of the target block: mean shifted by the kernel
    regression of the innovation, covariance reduced to the Schur
    complement.  All solves go through the jittered Cholesky of ``k_aa``.
    """
    prior_mean_a = np.atleast_1d(np.asarray(prior_mean_a, dtype=float))
    prior_mean_c = np.atleast_1d(np.asarray(prior_mean_c, dtype=float))
    anchor_values = np.atleast_1d(np.asarray(anchor_values, dtype=float))
    k_aa = np.asarray(k_aa, dtype=float)
    k_ac = np.asarray(k_ac, dtype=float)
    k_cc = np.asarray(k_cc, dtype=float)
    n_a, n_c = prior_mean_a.shape[0], prior_mean_c.shape[0]
    if k_aa.shape != (n_a, n_a) or k_ac.shape != (n_a, n_c) or k_cc.shape != (n_c, n_c):
        raise ValueError("conditioning block shapes are inconsistent")
    if anchor_values.shape[0] != n_a:
        raise ValueError("anchor values do not match the anchor block size")

    chol_aa = chol_psd(k_aa)
    w = chol_solve(chol_aa, k_ac)  # K_aa^{-1} K_ac
    mean = prior_mean_c + w.T @ (anchor_values - prior_mean_a)
    cov = sym(k_cc - k_ac.T @ w)
    return GaussianDensity(mean, cov)


def gp_sample(density: GaussianDensity, rng_seed: int) -> np.ndarray:
    """One draw from the density via its jittered Cholesky factor.

    A fixed seed gives a bit-identical draw; a zero covariance returns the
    mean exactly.
    """
    chol = chol_psd(density.cov)
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(density.dim)
    return density.mean + chol @ noise


def sample_with_rng(density: GaussianDensity, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Draw ``size`` samples (columns) reusing a caller-owned generator."""
    chol = chol_psd(density.cov)
    noise = rng.standard_normal((density.dim, size))
    return density.mean[:, None] + chol @ noise


def _check_distinct(points: np.ndarray) -> None:
    n = len(points)
    if n < 2:
        return
    diff = points[:, None, :] - points[None, :, :]
    dist2 = np.sum(diff * diff, axis=2)
    dist2[np.diag_indices(n)] = np.inf
    if dist2.min() == 0.0:
        raise NumericalError("coincident anchor points make the Gram matrix singular")


def anchor_basis_matrix(anchors, kernel: SqExpKernel, queries) -> np.ndarray:
    """Interpolating basis weights at many query points, one row per query.

    Row ``q`` solves ``K(x_q, A) K(A, A)^{-1}``; evaluating at an anchor
    reproduces the corresponding unit vector up to jitter tolerance.
    """
    anchor_pts = as_points(anchors)
    query_pts = as_points(queries)
    _check_distinct(anchor_pts)
    k_aa = cov_matrix(anchor_pts, kernel)
    k_aq = cov_matrix(anchor_pts, kernel, points2=query_pts)
    chol = chol_psd(k_aa)
    return chol_solve(chol, k_aq).T


def anchor_basis(anchors, kernel: SqExpKernel, query) -> np.ndarray:
    """Interpolating basis weight vector for a single query coordinate."""
    return anchor_basis_matrix(anchors, kernel, [np.atleast_1d(query)])[0]


__all__ = [
    "SqExpKernel",
    "RandomFieldSpec",
    "GaussianDensity",
    "NumericalError",
    "anchor_basis",
    "anchor_basis_matrix",
    "as_points",
    "constant_mean",
    "cov_matrix",
    "gp_condition",
    "gp_sample",
    "jitter_for",
    "kernel_eval",
    "sample_with_rng",
]
