"""Conditioning the forward solution on sensor readings.

The observed data decomposes into a scaled projection of the nodal solution,
a zero-mean Gaussian mismatch between model and reality, and iid sensor
noise.  Everything stays Gaussian, so the posterior of the solution, the
posterior of the true response, the marginal likelihood of the readings and
the predictive density at new locations are all closed form.  Posterior
covariances can be formed either directly in solution space or through the
Sherman-Morrison-Woodbury identity, which only factorises a dense matrix of
the (usually much smaller) sensor dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import GaussianDensity, SqExpKernel, as_points, cov_matrix
from .linalg import chol_psd, chol_solve, logdet_from_chol, sym
from .mesh import Mesh, triangle_areas

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GeneratingModel:
    """Statistical model of the readings: scaling, mismatch kernel, noise.

    ``mismatch_kernel=None`` drops the mismatch component entirely, which is
    the classical inverse-problem reduction where data is the solution plus
    noise.
    """

    rho: float
    mismatch_kernel: SqExpKernel | None
    noise_sigma: float
    obs_points: np.ndarray

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("scaling parameter must be positive")
        if not self.noise_sigma > 0:
            raise ValueError("noise level must be positive")
        object.__setattr__(self, "obs_points", as_points(self.obs_points))

    @property
    def n_y(self) -> int:
        return self.obs_points.shape[0]

    def with_points(self, points) -> "GeneratingModel":
        return GeneratingModel(self.rho, self.mismatch_kernel, self.noise_sigma, points)


@dataclass(frozen=True)
class ProjectionMatrix:
    """Basis functions at the observation points, over free nodes only."""

    P: np.ndarray


@dataclass(frozen=True)
class ObservationSet:
    """Sensor coordinates plus a matrix of repeated readings (one column each)."""

    points: np.ndarray
    readings: np.ndarray

    def __post_init__(self):
        points = as_points(self.points)
        readings = np.asarray(self.readings, dtype=float)
        if readings.ndim == 1:
            readings = readings.reshape(-1, 1)
        if readings.shape[0] != points.shape[0]:
            raise ValueError("one reading row per observation point required")
        if readings.shape[1] < 1:
            raise ValueError("at least one reading column required")
        if len(np.unique(points, axis=0)) != len(points):
            raise ValueError("observation points must be distinct")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "readings", readings)

    @property
    def n_y(self) -> int:
        return self.points.shape[0]

    @property
    def n_o(self) -> int:
        return self.readings.shape[1]


def _locate_1d(mesh: Mesh, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x0 = mesh.nodes[mesh.elements[:, 0], 0]
    x1 = mesh.nodes[mesh.elements[:, 1], 0]
    tol = 1e-12 * max(1.0, np.abs(mesh.nodes).max())
    elems = np.empty(len(pts), dtype=int)
    coords = np.empty((len(pts), 2))
    for i, x in enumerate(pts[:, 0]):
        inside = np.flatnonzero((x >= x0 - tol) & (x <= x1 + tol))
        if len(inside) == 0:
            raise ValueError(f"point {x} lies outside the mesh")
        e = int(inside[0])
        t = (x - x0[e]) / (x1[e] - x0[e])
        elems[i] = e
        coords[i] = (1.0 - t, t)
    return elems, coords


def _locate_2d(mesh: Mesh, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = mesh.nodes[mesh.elements[:, 0]]
    b = mesh.nodes[mesh.elements[:, 1]]
    c = mesh.nodes[mesh.elements[:, 2]]
    areas = triangle_areas(mesh.nodes, mesh.elements)
    tol = 1e-10
    elems = np.empty(len(pts), dtype=int)
    coords = np.empty((len(pts), 3))

    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    for i, p in enumerate(pts):
        l1 = cross(b - p, c - p) / (2.0 * areas)
        l2 = cross(c - p, a - p) / (2.0 * areas)
        l3 = 1.0 - l1 - l2
        inside = np.flatnonzero((l1 >= -tol) & (l2 >= -tol) & (l3 >= -tol))
        if len(inside) == 0:
            raise ValueError(f"point {tuple(p)} lies outside the mesh")
        e = int(inside[0])
        elems[i] = e
        coords[i] = (l1[e], l2[e], l3[e])
    return elems, coords


def projection_matrix(mesh: Mesh, points) -> ProjectionMatrix:
    """Evaluate the free-node basis functions at the given coordinates.

    Each row holds the barycentric weights of the element containing the
    point; weights on Dirichlet nodes are dropped, so a point sitting on an
    essential boundary node yields a zero row.
    """
    pts = as_points(points)
    if pts.shape[1] != mesh.dim:
        raise ValueError(f"points are {pts.shape[1]}-d but the mesh is {mesh.dim}-d")
    elems, coords = (_locate_1d if mesh.dim == 1 else _locate_2d)(mesh, pts)
    out = np.zeros((len(pts), mesh.n_free))
    for row, (e, lam) in enumerate(zip(elems, coords)):
        for local, node in enumerate(mesh.elements[e]):
            free = mesh.free_index[node]
            if free >= 0:
                out[row, free] += lam[local]
    return ProjectionMatrix(P=out)


def mismatch_cov(model: GeneratingModel) -> tuple[np.ndarray, np.ndarray]:
    """Mismatch and noise covariances at the model's observation points."""
    n = model.n_y
    if model.mismatch_kernel is None:
        c_d = np.zeros((n, n))
    else:
        c_d = cov_matrix(model.obs_points, model.mismatch_kernel)
    c_e = model.noise_sigma**2 * np.eye(n)
    return c_d, c_e


def _readings_cov(model: GeneratingModel) -> np.ndarray:
    c_d, c_e = mismatch_cov(model)
    return c_d + c_e


def marginal_covariance(prior: GaussianDensity, model: GeneratingModel, proj: ProjectionMatrix) -> np.ndarray:
    """Covariance of a single reading vector under the generating model."""
    p = proj.P
    return sym(_readings_cov(model) + model.rho**2 * p @ prior.cov @ p.T)


def posterior_u(
    prior: GaussianDensity,
    model: GeneratingModel,
    proj: ProjectionMatrix,
    obs: ObservationSet | None,
    *,
    method: str = "auto",
) -> GaussianDensity:
    """Posterior solution density given repeated readings.

    ``method`` picks the covariance route: ``"woodbury"`` factorises only a
    sensor-sized matrix, ``"direct"`` works in solution space, ``"auto"``
    uses Woodbury whenever there are fewer sensors than unknowns.  Passing
    ``obs=None`` (no readings) returns the prior unchanged.
    """
    if obs is None:
        return GaussianDensity(prior.mean.copy(), prior.cov.copy())
    p = proj.P
    n_y, n_u = p.shape
    if obs.n_y != n_y:
        raise ValueError("observation set and projection disagree on sensor count")
    if method == "auto":
        method = "woodbury" if n_y < n_u else "direct"

    rho, n_o = model.rho, obs.n_o
    noise = _readings_cov(model)
    chol_noise = chol_psd(noise)
    y_sum = obs.readings.sum(axis=1)
    chol_prior = chol_psd(prior.cov)
    info_vec = rho * p.T @ chol_solve(chol_noise, y_sum) + chol_solve(chol_prior, prior.mean)

    if method == "direct":
        prior_precision = chol_solve(chol_prior, np.eye(n_u))
        precision = rho**2 * n_o * p.T @ chol_solve(chol_noise, p) + prior_precision
        chol_post = chol_psd(sym(precision))
        cov = sym(chol_solve(chol_post, np.eye(n_u)))
    elif method == "woodbury":
        pc = p @ prior.cov
        inner = sym(noise / (rho**2 * n_o) + pc @ p.T)
        cov = sym(prior.cov - pc.T @ chol_solve(chol_psd(inner), pc))
    else:
        raise ValueError(f"unknown posterior method {method!r}")
    return GaussianDensity(cov @ info_vec, cov)


def woodbury_posterior_cov(
    prior_cov: np.ndarray, model: GeneratingModel, proj: ProjectionMatrix
) -> np.ndarray:
    """Single-reading posterior covariance via the low-rank update identity.

    Only the sensor-sized inner matrix is factorised; in the no-information
    limit (vanishing scaling) the prior covariance is returned unchanged.
    """
    p = proj.P
    pc = p @ prior_cov
    inner = sym(_readings_cov(model) / model.rho**2 + pc @ p.T)
    return sym(prior_cov - pc.T @ chol_solve(chol_psd(inner), pc))


def log_marginal_likelihood(
    prior: GaussianDensity,
    model: GeneratingModel,
    proj: ProjectionMatrix,
    obs: ObservationSet,
) -> float:
    """Log evidence of all readings under the generating model.

    Readings are independent given the solution, so the joint evidence is
    the product over columns of a fixed Gaussian whose covariance is
    factorised once and reused.
    """
    p = proj.P
    mean = model.rho * (p @ prior.mean)
    chol = chol_psd(marginal_covariance(prior, model, proj))
    centred = obs.readings - mean[:, None]
    from scipy.linalg import solve_triangular

    white = solve_triangular(chol, centred, lower=True)
    quad = float(np.sum(white**2))
    n_y, n_o = obs.n_y, obs.n_o
    return -0.5 * (n_o * (n_y * _LOG_2PI + logdet_from_chol(chol)) + quad)


def posterior_z(
    post_u: GaussianDensity, model: GeneratingModel, proj: ProjectionMatrix
) -> GaussianDensity:
    """Density of the unobserved true response at the observation points."""
    p = proj.P
    c_d, _ = mismatch_cov(model)
    mean = model.rho * (p @ post_u.mean)
    cov = sym(model.rho**2 * p @ post_u.cov @ p.T + c_d)
    return GaussianDensity(mean, cov)


def predictive_density(
    post_u: GaussianDensity,
    model: GeneratingModel,
    mesh: Mesh,
    new_points,
) -> GaussianDensity:
    """Predictive reading density at locations without sensors.

    Rebuilds the projection, mismatch and noise blocks at the new points and
    adds the propagated posterior uncertainty of the solution.
    """
    pts = as_points(new_points)
    proj = projection_matrix(mesh, pts)
    tilde_model = model.with_points(pts)
    c_d, c_e = mismatch_cov(tilde_model)
    p = proj.P
    mean = model.rho * (p @ post_u.mean)
    cov = sym(c_d + c_e + model.rho**2 * p @ post_u.cov @ p.T)
    return GaussianDensity(mean, cov)
