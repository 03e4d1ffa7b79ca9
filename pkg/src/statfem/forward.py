"""Probabilistic forward solves of the Poisson problem.

The discrete system ``A(kappa) u = f`` couples an element-constant
log-diffusivity vector with a nodal source vector; both may be Gaussian.
Randomness in the source propagates exactly (affine map through the solve);
randomness in the log-diffusivity propagates by a first-order expansion
around its mean.  A Monte Carlo sampler and an analytic Greens-function
variance serve as independent checks of the propagated covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .gp import (
    GaussianDensity,
    RandomFieldSpec,
    as_points,
    cov_matrix,
    gp_condition,
)
from .linalg import NumericalError, chol_psd, sym
from .mesh import BarycentreSet, Mesh, barycentres, triangle_areas

STABILISATION_FACTOR = 1e-3


@dataclass(frozen=True)
class DiffusionField:
    """Element-constant log-diffusivity, deterministic or Gaussian.

    ``values`` fixes the field (one entry per element).  Otherwise ``spec``
    describes a Gaussian field evaluated at element barycentres, optionally
    conditioned on known values at anchor coordinates.
    """

    spec: RandomFieldSpec | None = None
    values: np.ndarray | None = None
    anchor_points: np.ndarray | None = None
    anchor_values: np.ndarray | None = None

    def __post_init__(self):
        if self.spec is None and self.values is None:
            raise ValueError("diffusion field needs fixed values or a random spec")
        if self.anchor_points is not None and self.spec is None:
            raise ValueError("anchor conditioning needs a random spec")

    @property
    def sigma(self) -> float:
        """Kernel scaling of the random part; zero for a fixed field."""
        if self.values is not None or self.spec is None or self.spec.kernel is None:
            return 0.0
        return self.spec.kernel.sigma


@dataclass(frozen=True)
class SourceField:
    """Gaussian source term; a spec without kernel is deterministic."""

    spec: RandomFieldSpec

    @property
    def sigma(self) -> float:
        return 0.0 if self.spec.kernel is None else self.spec.kernel.sigma


@dataclass(frozen=True)
class ForwardSolution:
    """Gaussian density of the nodal solution plus the ingredients behind it."""

    density: GaussianDensity
    system_matrix_at_mean: sp.csr_matrix
    source: GaussianDensity


def kappa_mean(mesh: Mesh, field: DiffusionField) -> np.ndarray:
    """Mean log-diffusivity per element, without forming any covariance.

    Cheap path for deterministic fields on heavily refined meshes, where
    the full density would allocate an element-squared zero matrix.
    """
    n_e = mesh.n_elements
    if field.values is not None:
        values = np.asarray(field.values, dtype=float)
        if values.shape != (n_e,):
            raise ValueError(f"fixed log-diffusivity must have length {n_e}")
        return values
    return kappa_density(mesh, field).mean


def kappa_density(mesh: Mesh, field: DiffusionField) -> GaussianDensity:
    """Density of the element log-diffusivity vector at the barycentres."""
    n_e = mesh.n_elements
    if field.values is not None:
        values = np.asarray(field.values, dtype=float)
        if values.shape != (n_e,):
            raise ValueError(f"fixed log-diffusivity must have length {n_e}")
        return GaussianDensity(values, np.zeros((n_e, n_e)))
    centres = barycentres(mesh).coords
    mean = field.spec.mean_at(centres)
    if field.spec.kernel is None:
        return GaussianDensity(mean, np.zeros((n_e, n_e)))
    cov = cov_matrix(centres, field.spec.kernel)
    if field.anchor_points is None:
        return GaussianDensity(mean, cov)
    anchors = as_points(field.anchor_points)
    mean_a = field.spec.mean_at(anchors)
    k_aa = cov_matrix(anchors, field.spec.kernel)
    k_ac = cov_matrix(anchors, field.spec.kernel, points2=centres)
    return gp_condition(mean_a, mean, k_aa, k_ac, cov, field.anchor_values)


class StiffnessAssembler:
    """Reusable element stiffness data for one mesh.

    The element matrices factor as ``exp(kappa_e)`` times a fixed geometric
    integral, so repeated assemblies (Monte Carlo, derivatives) only rescale
    precomputed blocks.  Rows and columns at Dirichlet nodes are eliminated.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nodes, elements = mesh.nodes, mesh.elements
        if mesh.dim == 1:
            lengths = nodes[elements[:, 1], 0] - nodes[elements[:, 0], 0]
            if np.any(lengths <= 0):
                raise NumericalError("degenerate segment in stiffness assembly")
            unit = np.array([[1.0, -1.0], [-1.0, 1.0]])
            self.base = unit[None, :, :] / lengths[:, None, None]
        else:
            areas = triangle_areas(nodes, elements)
            if np.any(areas <= 0):
                raise NumericalError("degenerate triangle in stiffness assembly")
            a, b, c = (nodes[elements[:, k]] for k in range(3))
            # Gradients of the linear shape functions on each triangle.
            grads = np.stack(
                [
                    np.column_stack([b[:, 1] - c[:, 1], c[:, 0] - b[:, 0]]),
                    np.column_stack([c[:, 1] - a[:, 1], a[:, 0] - c[:, 0]]),
                    np.column_stack([a[:, 1] - b[:, 1], b[:, 0] - a[:, 0]]),
                ],
                axis=1,
            ) / (2.0 * areas[:, None, None])
            self.base = areas[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)

        k = elements.shape[1]
        free = mesh.free_index[elements]  # (n_e, k), -1 at Dirichlet nodes
        rows = np.repeat(free[:, :, None], k, axis=2)
        cols = np.repeat(free[:, None, :], k, axis=1)
        keep = (rows >= 0) & (cols >= 0)
        self._rows = rows[keep]
        self._cols = cols[keep]
        self._keep = keep
        self._element_of_entry = np.broadcast_to(
            np.arange(mesh.n_elements)[:, None, None], keep.shape
        )[keep]
        self._local_free = [np.flatnonzero(free[e] >= 0) for e in range(mesh.n_elements)]
        self._free_of_element = [free[e][idx] for e, idx in enumerate(self._local_free)]

    @property
    def n_free(self) -> int:
        return self.mesh.n_free

    def assemble(self, kappa: np.ndarray) -> sp.csr_matrix:
        kappa = np.asarray(kappa, dtype=float)
        if kappa.shape != (self.mesh.n_elements,):
            raise ValueError(
                f"kappa must have one entry per element ({self.mesh.n_elements})"
            )
        data = (np.exp(kappa)[:, None, None] * self.base)[self._keep]
        n = self.n_free
        return sp.coo_matrix((data, (self._rows, self._cols)), shape=(n, n)).tocsr()

    def element_contribution(self, e: int, kappa_e: float) -> sp.csr_matrix:
        """Global scatter of a single element matrix."""
        if not 0 <= e < self.mesh.n_elements:
            raise IndexError(f"element index {e} out of range")
        local = self._local_free[e]
        block = np.exp(kappa_e) * self.base[e][np.ix_(local, local)]
        glob = self._free_of_element[e]
        rows = np.repeat(glob, len(glob))
        cols = np.tile(glob, len(glob))
        n = self.n_free
        return sp.coo_matrix((block.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    def element_free_block(self, e: int, kappa_e: float):
        """Dense element block restricted to free nodes plus their indices."""
        local = self._local_free[e]
        return np.exp(kappa_e) * self.base[e][np.ix_(local, local)], self._free_of_element[e]


def assemble_system(mesh: Mesh, kappa: np.ndarray) -> sp.csr_matrix:
    """System matrix with Dirichlet rows and columns eliminated."""
    return StiffnessAssembler(mesh).assemble(kappa)


def system_matrix_derivative(mesh: Mesh, kappa_bar: np.ndarray, e: int) -> sp.csr_matrix:
    """Derivative of the system matrix in one element's log-diffusivity.

    The exponential parameterisation makes this the scattered element matrix
    itself, evaluated at the expansion point.
    """
    kappa_bar = np.asarray(kappa_bar, dtype=float)
    return StiffnessAssembler(mesh).element_contribution(e, kappa_bar[e])


def _quad_rule_1d(mesh: Mesh, quad_points: int):
    """Global Gauss points, weights and hat values for every segment."""
    xi, wref = np.polynomial.legendre.leggauss(quad_points)
    x0 = mesh.nodes[mesh.elements[:, 0], 0]
    x1 = mesh.nodes[mesh.elements[:, 1], 0]
    half = 0.5 * (x1 - x0)
    pts = x0[:, None] + half[:, None] * (xi[None, :] + 1.0)
    weights = half[:, None] * wref[None, :]
    # Hat values of the two element nodes at each of its quadrature points.
    t = (pts - x0[:, None]) / (2.0 * half[:, None])
    phi = np.stack([1.0 - t, t], axis=2)  # (n_e, q, 2)
    return pts.reshape(-1, 1), weights.ravel(), phi.reshape(-1, 2)


_TRI_QUAD_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def _quad_rule_tri(mesh: Mesh):
    """Edge-midpoint rule, exact for quadratics on straight triangles."""
    corners = mesh.nodes[mesh.elements]  # (n_e, 3, 2)
    pts = np.einsum("qk,ekd->eqd", _TRI_QUAD_BARY, corners)
    areas = triangle_areas(mesh.nodes, mesh.elements)
    weights = np.repeat(areas / 3.0, 3)
    phi = np.broadcast_to(_TRI_QUAD_BARY[None], (mesh.n_elements, 3, 3))
    return pts.reshape(-1, 2), weights, phi.reshape(-1, 3)


def _source_quadrature(mesh: Mesh, quad_points: int):
    if mesh.dim == 1:
        return _quad_rule_1d(mesh, quad_points)
    return _quad_rule_tri(mesh)


def assemble_source_mean(mesh: Mesh, f: SourceField, quad_points: int = 2) -> np.ndarray:
    """Load vector of the mean source over the free nodes."""
    pts, weights, phi = _source_quadrature(mesh, quad_points)
    values = f.spec.mean_at(pts)
    contrib = (weights * values)[:, None] * phi
    per_element = len(pts) // mesh.n_elements
    elem_of_pt = np.arange(len(pts)) // per_element
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements[elem_of_pt].ravel(), contrib.ravel())
    return out[mesh.free_nodes]


def unit_load(mesh: Mesh) -> np.ndarray:
    """Integrals of the free-node basis functions (a uniform unit source)."""
    ones = SourceField(RandomFieldSpec(lambda pts: np.ones(len(pts)), None))
    return assemble_source_mean(mesh, ones)


def assemble_source_cov_exact(
    mesh: Mesh, f: SourceField, quad_points_per_element: int = 10
) -> np.ndarray:
    """Source covariance from the double integral of the kernel against hats.

    Tensor-product Gauss quadrature over element pairs; only implemented for
    segments, which is where it is needed for convergence comparisons.
    """
    if mesh.dim != 1:
        raise NotImplementedError("exact source covariance is 1D only; use the lumped form")
    if quad_points_per_element < 2:
        raise ValueError("need at least 2 quadrature points per element")
    if f.spec.kernel is None:
        n = mesh.n_free
        return np.zeros((n, n))
    pts, weights, phi = _quad_rule_1d(mesh, quad_points_per_element)
    # Weighted hat values of every free node at every quadrature point.
    n_q = len(pts)
    basis = np.zeros((n_q, mesh.n_nodes))
    elem_of_pt = np.arange(n_q) // quad_points_per_element
    for local in range(2):
        basis[np.arange(n_q), mesh.elements[elem_of_pt, local]] += phi[:, local]
    basis = basis[:, mesh.free_nodes] * weights[:, None]
    gram = cov_matrix(pts, f.spec.kernel)
    return sym(basis.T @ gram @ basis)


def assemble_source_cov_lumped(mesh: Mesh, f: SourceField) -> np.ndarray:
    """Lumped source covariance: unit loads times the nodal kernel values."""
    loads = unit_load(mesh)
    if f.spec.kernel is None:
        n = mesh.n_free
        return np.zeros((n, n))
    gram = cov_matrix(mesh.nodes[mesh.free_nodes], f.spec.kernel)
    return loads[:, None] * gram * loads[None, :]


def source_density(
    mesh: Mesh,
    f: SourceField,
    cov: str = "lumped",
    quad_points: int = 10,
    mean_quad: int = 2,
) -> GaussianDensity:
    """Gaussian density of the nodal source vector."""
    mean = assemble_source_mean(mesh, f, quad_points=mean_quad)
    if cov == "lumped":
        matrix = assemble_source_cov_lumped(mesh, f)
    elif cov == "exact":
        matrix = assemble_source_cov_exact(mesh, f, quad_points)
    else:
        raise ValueError(f"unknown source covariance mode {cov!r}")
    return GaussianDensity(mean, matrix)


def _factorise(a: sp.spmatrix):
    try:
        return splu(sp.csc_matrix(a))
    except RuntimeError as err:
        raise NumericalError(f"system matrix factorisation failed: {err}") from err


def forward_fixed_kappa(a: sp.spmatrix, f_density: GaussianDensity) -> GaussianDensity:
    """Solution density for a fixed diffusivity: an affine map of the source.

    One sparse factorisation; the covariance is pushed through by repeated
    triangular solves.
    """
    lu = _factorise(a)
    mean = lu.solve(f_density.mean)
    if not np.any(f_density.cov):
        return GaussianDensity(mean, np.zeros_like(f_density.cov))
    half = lu.solve(f_density.cov)
    cov = sym(lu.solve(half.T))
    return GaussianDensity(mean, cov)


def perturbation_forward(
    mesh: Mesh,
    kappa: DiffusionField,
    f: SourceField,
    *,
    stabilize: bool = True,
    source_cov: str = "lumped",
    quad_points: int = 10,
    mean_quad: int = 2,
) -> ForwardSolution:
    """First-order propagation of source and log-diffusivity randomness.

    The mean solves the system at the mean log-diffusivity.  The covariance
    adds the exact source push-forward and the double sum over element pairs
    weighted by the log-diffusivity covariance, using the fact that the
    derivative of the system matrix in one element coefficient is that
    element's scattered matrix.  Unless disabled, the covariance is
    stabilised by a small multiple of the total input variance on the
    diagonal, which keeps downstream factorisations well posed when the
    kernel lengthscales exceed the element size.
    """
    kd = kappa_density(mesh, kappa)
    fd = source_density(mesh, f, cov=source_cov, quad_points=quad_points, mean_quad=mean_quad)
    assembler = StiffnessAssembler(mesh)
    a = assembler.assemble(kd.mean)
    lu = _factorise(a)
    mean = lu.solve(fd.mean)
    n_u = len(mean)

    cov = lu.solve(lu.solve(fd.cov).T) if np.any(fd.cov) else np.zeros((n_u, n_u))

    if np.any(kd.cov):
        second_moment = fd.cov + np.outer(fd.mean, fd.mean)
        half_q = lu.solve(chol_psd(second_moment))  # A^{-1} L with L L^T the source second moment
        n_e = mesh.n_elements
        grads = np.zeros((n_e, n_u, n_u))
        for e in range(n_e):
            block, idx = assembler.element_free_block(e, kd.mean[e])
            if len(idx) == 0:
                continue
            cols = np.zeros((n_u, len(idx)))
            cols[idx, np.arange(len(idx))] = 1.0
            inv_cols = lu.solve(cols)  # columns of A^{-1} at this element's nodes
            grads[e] = inv_cols @ (block @ half_q[idx, :])
        chol_kappa = chol_psd(kd.cov)
        mixed = np.einsum("em,eij->mij", chol_kappa, grads)
        cov = cov + np.tensordot(mixed, mixed, axes=([0, 2], [0, 2]))

    cov = sym(cov)
    if stabilize:
        cov = cov + STABILISATION_FACTOR * (f.sigma**2 + kappa.sigma**2) * np.eye(n_u)
    return ForwardSolution(
        density=GaussianDensity(mean, cov),
        system_matrix_at_mean=a,
        source=fd,
    )


def mc_forward_oracle(
    mesh: Mesh,
    kappa: DiffusionField,
    f: SourceField,
    n_samples: int,
    rng_seed: int,
    *,
    source_cov: str = "lumped",
    quad_points: int = 10,
    mean_quad: int = 2,
) -> GaussianDensity:
    """Empirical solution density from joint sampling of inputs and solves.

    Draws the log-diffusivity and source vectors from the same densities the
    perturbation method uses, solves each realisation and returns the sample
    mean and covariance.  Deterministic for a fixed seed.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples for an empirical covariance")
    kd = kappa_density(mesh, kappa)
    fd = source_density(mesh, f, cov=source_cov, quad_points=quad_points, mean_quad=mean_quad)
    assembler = StiffnessAssembler(mesh)
    rng = np.random.default_rng(rng_seed)
    chol_kappa = chol_psd(kd.cov)
    chol_f = chol_psd(fd.cov)
    kappa_random = np.any(chol_kappa)
    f_random = np.any(chol_f)
    n_u = mesh.n_free

    if not kappa_random:
        lu = _factorise(assembler.assemble(kd.mean))
        if f_random:
            noise = rng.standard_normal((len(fd.mean), n_samples))
            sources = fd.mean[:, None] + chol_f @ noise
        else:
            sources = np.repeat(fd.mean[:, None], n_samples, axis=1)
        solutions = lu.solve(np.ascontiguousarray(sources))
    else:
        solutions = np.empty((n_u, n_samples))
        for s in range(n_samples):
            kappa_s = kd.mean + (chol_kappa @ rng.standard_normal(len(kd.mean)))
            f_s = fd.mean + (chol_f @ rng.standard_normal(len(fd.mean)) if f_random else 0.0)
            solutions[:, s] = _factorise(assembler.assemble(kappa_s)).solve(f_s)

    mean = solutions.mean(axis=1)
    centred = solutions - mean[:, None]  # two passes avoid cancellation
    cov = (centred @ centred.T) / (n_samples - 1)
    return GaussianDensity(mean, sym(cov))


def greens_variance_1d(x: float, f: SourceField, quad_n: int = 24) -> float:
    """Exact solution variance at a point for the unit-diffusivity problem.

    Pushes the source covariance through the closed-form kernel of the
    two-point boundary value problem on (0, 1) by Gauss quadrature, split at
    the evaluation point where the kernel loses smoothness.
    """
    if not 0.0 < x < 1.0:
        raise ValueError("evaluation point must lie strictly inside (0, 1)")
    if f.spec.kernel is None:
        return 0.0
    xi, wref = np.polynomial.legendre.leggauss(quad_n)
    pts, weights = [], []
    for lo, hi in ((0.0, x), (x, 1.0)):
        half = 0.5 * (hi - lo)
        pts.append(lo + half * (xi + 1.0))
        weights.append(half * wref)
    s = np.concatenate(pts)
    w = np.concatenate(weights)
    g = np.where(s < x, s * (1.0 - x), x * (1.0 - s))
    gram = cov_matrix(s, f.spec.kernel)
    wg = w * g
    return float(wg @ gram @ wg)
