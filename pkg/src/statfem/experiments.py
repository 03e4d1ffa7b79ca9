"""Experiment drivers: synthetic data, learning runs and file emission.

Each driver reproduces one study end to end: build the forward prior,
synthesise readings from a known true process, learn the unknown
hyperparameters by MCMC, condition the solution and write CSV/JSON
artefacts.  All randomness flows from one root seed through named
substreams, so every output file is reproducible bit for bit.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .forward import (
    DiffusionField,
    ForwardSolution,
    SourceField,
    StiffnessAssembler,
    assemble_source_cov_exact,
    assemble_source_cov_lumped,
    assemble_source_mean,
    forward_fixed_kappa,
    greens_variance_1d,
    kappa_density,
    kappa_mean,
    perturbation_forward,
)
from .gp import (
    GaussianDensity,
    RandomFieldSpec,
    SqExpKernel,
    anchor_basis_matrix,
    as_points,
    constant_mean,
    cov_matrix,
)
from .hyperlearn import (
    Chain,
    GaussianPrior,
    HyperParamVector,
    PriorSpec,
    chain_summary,
    log_posterior_w,
    metropolis_sample,
    summary_dict,
    tune_with_warm_start,
    write_chain_csv,
)
from .inference import (
    GeneratingModel,
    ObservationSet,
    ProjectionMatrix,
    log_marginal_likelihood,
    posterior_u,
    posterior_z,
    projection_matrix,
)
from .linalg import chol_psd
from .mesh import Mesh, barycentres, build_interval_mesh, build_plate_with_hole

CI95 = 1.959963984540054  # two-sided 95% normal quantile

_LAYOUT_1D = {
    33: np.arange(1, 34),
    11: np.arange(2, 33, 3),
    4: np.array([2, 11, 23, 32]),
}


@dataclass(frozen=True)
class TrueProcess:
    """Reference model that synthetic readings are drawn from.

    ``greens_gp_1d`` and ``fine_mesh_fem`` push a Gaussian source through a
    fine reference solve; ``anchor_dirac`` solves a fixed diffusivity field
    built from anchor coefficients, so its response is deterministic.  All
    kinds add iid sensor noise per reading.
    """

    kind: str
    mesh: Mesh
    diffusion: DiffusionField
    source: SourceField
    noise_sigma: float

    def __post_init__(self):
        if self.kind not in ("greens_gp_1d", "fine_mesh_fem", "anchor_dirac"):
            raise ValueError(f"unknown true process kind {self.kind!r}")
        if not self.noise_sigma > 0:
            raise ValueError("observation noise must be positive")


def response_density(process: TrueProcess, points, chunk: int = 2048) -> GaussianDensity:
    """Density of the noise-free true response at the given points.

    Pushes the lumped source covariance through the reference solve without
    ever materialising the full covariance of the reference mesh: the kernel
    Gram matrix is streamed in row blocks against the solved sensor columns,
    so memory stays sensor-sized even for heavily refined truths.
    """
    pts = as_points(points)
    proj = projection_matrix(process.mesh, pts)
    assembler = StiffnessAssembler(process.mesh)
    from scipy.sparse.linalg import splu
    import scipy.sparse as sp

    lu = splu(sp.csc_matrix(assembler.assemble(kappa_mean(process.mesh, process.diffusion))))
    pushed = lu.solve(proj.P.T)  # A^{-1} P^T, one column per sensor
    mean = pushed.T @ assemble_source_mean(process.mesh, process.source)
    kernel = process.source.spec.kernel
    n_y = len(pts)
    if kernel is None:
        return GaussianDensity(mean, np.zeros((n_y, n_y)))
    from .forward import unit_load

    weighted = pushed * unit_load(process.mesh)[:, None]  # diag(loads) A^{-1} P^T
    nodes = process.mesh.nodes[process.mesh.free_nodes]
    # Cap the streamed Gram block at ~64 MB regardless of mesh size.
    chunk = max(1, min(chunk, (1 << 23) // max(len(nodes), 1)))
    cov = np.zeros((n_y, n_y))
    for start in range(0, len(nodes), chunk):
        block = cov_matrix(nodes[start : start + chunk], kernel, points2=nodes)
        cov += weighted[start : start + chunk].T @ (block @ weighted)
    return GaussianDensity(mean, 0.5 * (cov + cov.T))


def sample_observations(
    process: TrueProcess, points, n_o: int, rng_seed: int
) -> ObservationSet:
    """Draw a matrix of repeated noisy readings of the true response."""
    if n_o < 1:
        raise ValueError("need at least one reading")
    pts = as_points(points)
    density = response_density(process, pts)
    chol = chol_psd(density.cov)
    rng = np.random.default_rng(rng_seed)
    signal = density.mean[:, None] + chol @ rng.standard_normal((len(pts), n_o))
    noise = process.noise_sigma * rng.standard_normal((len(pts), n_o))
    return ObservationSet(points=pts, readings=signal + noise)


def observation_layout_1d(n_y: int) -> np.ndarray:
    """Nested interior sensor sets on (0, 1): 4 within 11 within 33."""
    if n_y not in _LAYOUT_1D:
        raise ValueError(f"supported 1D sensor counts are {sorted(_LAYOUT_1D)}, got {n_y}")
    return (_LAYOUT_1D[n_y] / 34.0).reshape(-1, 1)


def observation_layout_2d(mesh: Mesh, n_y: int) -> np.ndarray:
    """Nested node subsets chosen by greedy matching to a Sobol sequence."""
    if n_y not in (32, 64, 125):
        raise ValueError(f"supported 2D sensor counts are [32, 64, 125], got {n_y}")
    if n_y > mesh.n_nodes:
        raise ValueError("more sensors requested than mesh nodes")
    sobol = qmc.Sobol(d=2, scramble=False)
    taken: list[int] = []
    free = np.ones(mesh.n_nodes, dtype=bool)
    while len(taken) < n_y:
        draw = sobol.random(1)[0]
        dist = np.linalg.norm(mesh.nodes - draw[None, :], axis=1)
        dist[~free] = np.inf
        pick = int(np.argmin(dist))
        free[pick] = False
        taken.append(pick)
    return mesh.nodes[taken].copy()


def substream_seed(root_seed: int, name: str) -> int:
    """Deterministic child seed for a named stream."""
    return int(np.random.SeedSequence([root_seed, zlib.crc32(name.encode())]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# File helpers


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


def write_field_csv(path, points, mean, var) -> None:
    """Band file: coordinates, mean and the 95% interval per row."""
    pts = as_points(points)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    header = ("x,mean,lo95,hi95" if pts.shape[1] == 1 else "x,y,mean,lo95,hi95")
    lines = [header]
    for i in range(len(pts)):
        coords = [_fmt(c) for c in pts[i]]
        lines.append(
            ",".join(coords + [_fmt(mean[i]), _fmt(mean[i] - CI95 * sd[i]), _fmt(mean[i] + CI95 * sd[i])])
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_convergence_csv(path, h_values, errors) -> None:
    lines = ["h,error"]
    lines += [f"{_fmt(h)},{_fmt(e)}" for h, e in zip(h_values, errors)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def density_json(density: GaussianDensity, provenance: dict) -> dict:
    return {
        "n": density.dim,
        "mean": [float(v) for v in density.mean],
        "cov": [float(v) for v in density.cov.ravel()],
        "provenance": provenance,
    }


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Shared learning loop


def _learn_hyperparameters(
    names: tuple[str, ...],
    init: np.ndarray,
    obs: ObservationSet,
    model_builder,
    prior: PriorSpec,
    iterations: int,
    seed: int,
    burn_in: float,
) -> Chain:
    def target(values: np.ndarray) -> float:
        return log_posterior_w(HyperParamVector(names, values), obs, model_builder, prior)

    sigma_q, warm = tune_with_warm_start(target, init, 0.25, rng_seed=substream_seed(seed, "tune"))
    return metropolis_sample(
        target,
        warm,
        iterations,
        sigma_q,
        substream_seed(seed, "chain"),
        names=names,
        burn_in_fraction=burn_in,
    )


def _grid_1d(n: int = 201) -> np.ndarray:
    return np.linspace(0.0, 1.0, n).reshape(-1, 1)


# ---------------------------------------------------------------------------
# Experiment parameter tables


def default_params(experiment: str, scale: str) -> dict:
    """Published parameter set per experiment, shrunk at desk scale."""
    if scale not in ("paper", "desk"):
        raise ValueError("scale must be 'paper' or 'desk'")
    desk = scale == "desk"
    if experiment == "convergence":
        return {
            "lengthscales": [0.25, 0.5, 1.0],
            "sigma_f": 0.2,
            "mesh_sizes": [8, 16, 32, 64, 128],
            "quad_points": 10,
            "oracle_quad": 24,
            "error_quad_per_element": 6,
        }
    if experiment == "random-source":
        return {
            "n_elements": 32,
            "f_mean": float(np.pi**2 / 5.0),
            "sigma_f": 0.3,
            "ell_f": 0.25,
            "truth_elements": 512,
            "z_sigma": 0.15,
            "z_ell": 0.5,
            "noise_sigma": 0.005,
            "n_y": [33] if desk else [4, 11, 33],
            "n_o": [1, 200] if desk else [1, 10, 100, 1000],
            "iterations": 10_000 if desk else 20_000,
            "burn_in": 0.3,
            "init": {"rho": 1.0, "sigma_d": 0.05, "ell_d": 0.3},
        }
    if experiment == "random-diffusivity":
        return {
            "n_elements": 32,
            "f_mean": float(np.pi**2 / 5.0),
            "kappa_mean": 1.0,
            "sigma_kappa": 0.15,
            "ell_kappa": 0.25,
            "kappa_anchors": [11.0 / 64.0, 23.0 / 64.0],
            "kappa_anchor_values": [1.0, 1.0],
            "truth_elements": 512,
            "z_sigma": 0.15,
            "z_ell": 0.5,
            "noise_sigma": 0.005,
            "n_y": [33] if desk else [4, 33],
            "n_o": [1, 100] if desk else [1, 10, 100, 1000],
            "iterations": 5_000 if desk else 20_000,
            "burn_in": 0.3,
            "init": {"rho": 1.0, "sigma_d": 0.05, "ell_d": 0.3},
        }
    if experiment == "inversion":
        return {
            "n_elements": 32,
            "anchors": [0.0, 0.25, 0.5, 0.75, 1.0],
            "basis_sigma": 1.0,
            "basis_ell": 0.32,
            "true_log_coefficients": [
                float(np.log(0.7)),
                float(np.log(1.0)),
                float(np.log(0.7)),
                float(np.log(0.4)),
                float(np.log(0.7)),
            ],
            "prior_log_means": [
                float(np.log(0.8)),
                float(np.log(1.1)),
                float(np.log(0.8)),
                float(np.log(0.5)),
                float(np.log(0.8)),
            ],
            "prior_log_var": 0.0025,
            "noise_prior_mean": 0.0075,
            "noise_prior_var": 4e-6,
            "true_noise_sigma": 0.01,
            "n_o": [1, 50] if desk else [1, 5, 25, 50],
            "iterations": 10_000 if desk else 50_000,
            "burn_in": 0.3,
        }
    if experiment == "mesh-selection":
        return {
            "mesh_sizes": [4, 8, 16, 32],
            "sigma_f": 0.2,
            "ell_f": 0.25,
            "rho": 0.8,
            "sigma_d": 0.005,
            "ell_d": 0.3,
            "noise_sigma": 0.005,
            "n_y": [33] if desk else [11, 33],
            "n_o": 100,
            "repeats": 20 if desk else 50,
            "learn_hyperparameters": not desk,
            "iterations": 10_000 if desk else 20_000,
            "burn_in": 0.3,
        }
    if experiment == "plate":
        return {
            "f_mean": 1.0,
            "sigma_f": 0.3,
            "ell_f": 0.15,
            "truth_refinement": 2 if desk else 4,
            "g_sigma": 0.1,
            "g_ell": 0.2,
            "noise_sigma": 0.005,
            "n_y": [64] if desk else [32, 64, 125],
            "n_o": [1, 10, 100] if desk else [1, 10, 100, 1000],
            "iterations": 10_000 if desk else 50_000,
            "burn_in": 0.3,
            "init": {"rho": 1.0, "sigma_d": 0.05, "ell_d": 0.3},
        }
    raise ValueError(f"unknown experiment {experiment!r}")


@dataclass
class ExperimentConfig:
    experiment: str
    scale: str = "paper"
    seed: int = 20_210_614
    out_dir: Path = Path("statfem-out")
    overrides: dict = field(default_factory=dict)

    def resolved_params(self) -> dict:
        params = default_params(self.experiment, self.scale)
        unknown = set(self.overrides) - set(params)
        if unknown:
            raise ValueError(f"unknown config keys for {self.experiment}: {sorted(unknown)}")
        params.update(self.overrides)
        return params


# ---------------------------------------------------------------------------
# Truth builders


def greens_truth_1d(params: dict) -> TrueProcess:
    """Fine-mesh reference for a smooth random 1D response.

    The source mean is the negative curvature of the target response, so
    the reference solve reproduces it up to discretisation error well below
    the sensor noise.
    """

    def forcing(pts: np.ndarray) -> np.ndarray:
        x = pts[:, 0]
        return (np.pi**2 / 5.0) * np.sin(np.pi * x) + (49.0 * np.pi**2 / 50.0) * np.sin(
            7.0 * np.pi * x
        )

    n_fine = params["truth_elements"]
    mesh = build_interval_mesh(n_fine)
    return TrueProcess(
        kind="greens_gp_1d",
        mesh=mesh,
        diffusion=DiffusionField(values=np.zeros(n_fine)),
        source=SourceField(
            RandomFieldSpec(forcing, SqExpKernel(params["z_sigma"], params["z_ell"]))
        ),
        noise_sigma=params["noise_sigma"],
    )


def plate_truth(params: dict) -> TrueProcess:
    """Quadrisected plate reference with a rough radial source."""

    def g_mean(pts: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(pts, axis=1)
        return 0.5 + 0.5 * np.sin(np.pi * r) + 3.0 * np.sin(7.0 * np.pi * r)

    mesh = build_plate_with_hole(params["truth_refinement"])
    return TrueProcess(
        kind="fine_mesh_fem",
        mesh=mesh,
        diffusion=DiffusionField(values=np.zeros(mesh.n_elements)),
        source=SourceField(RandomFieldSpec(g_mean, SqExpKernel(params["g_sigma"], params["g_ell"]))),
        noise_sigma=params["noise_sigma"],
    )


def anchor_truth(params: dict) -> TrueProcess:
    """Deterministic diffusivity truth interpolated from anchor coefficients."""
    mesh = build_interval_mesh(params["n_elements"])
    kernel = SqExpKernel(params["basis_sigma"], params["basis_ell"])
    basis = anchor_basis_matrix(params["anchors"], kernel, barycentres(mesh).coords)
    values = basis @ np.asarray(params["true_log_coefficients"])
    return TrueProcess(
        kind="anchor_dirac",
        mesh=mesh,
        diffusion=DiffusionField(values=values),
        source=SourceField(RandomFieldSpec(constant_mean(1.0), None)),
        noise_sigma=params["true_noise_sigma"],
    )


# ---------------------------------------------------------------------------
# Drivers


def run_convergence(params: dict, seed: int, out: Path) -> dict:
    """Variance convergence of the forward solve against the analytic value."""
    results = {}
    outputs = []
    gauss_n = params["error_quad_per_element"]
    xi, wref = np.polynomial.legendre.leggauss(gauss_n)
    oracle_cache: dict = {}
    for ell in params["lengthscales"]:
        f = SourceField(RandomFieldSpec(constant_mean(1.0), SqExpKernel(params["sigma_f"], ell)))
        for mode in ("exact", "lumped"):
            errors = []
            h_values = []
            for n_e in params["mesh_sizes"]:
                mesh = build_interval_mesh(n_e)
                fd_mean = assemble_source_mean(mesh, f)
                if mode == "exact":
                    cov = assemble_source_cov_exact(mesh, f, params["quad_points"])
                else:
                    cov = assemble_source_cov_lumped(mesh, f)
                assembler = StiffnessAssembler(mesh)
                sol = forward_fixed_kappa(assembler.assemble(np.zeros(n_e)), GaussianDensity(fd_mean, cov))
                h = 1.0 / n_e
                starts = np.arange(n_e) * h
                xs = (starts[:, None] + 0.5 * h * (xi[None, :] + 1.0)).ravel()
                ws = np.tile(0.5 * h * wref, n_e)
                proj = projection_matrix(mesh, xs.reshape(-1, 1)).P
                fe_var = np.einsum("qi,ij,qj->q", proj, sol.cov, proj)
                key = (ell, n_e)
                if key not in oracle_cache:
                    oracle_cache[key] = np.array(
                        [greens_variance_1d(float(x), f, params["oracle_quad"]) for x in xs]
                    )
                exact_var = oracle_cache[key]
                rel = np.sqrt(np.sum(ws * (fe_var - exact_var) ** 2) / np.sum(ws * exact_var**2))
                errors.append(rel)
                h_values.append(h)
            slope = float(np.polyfit(np.log(h_values), np.log(errors), 1)[0])
            name = f"convergence_lf{ell}_{mode}.csv"
            write_convergence_csv(out / name, h_values, errors)
            outputs.append(name)
            results[f"slope_lf{ell}_{mode}"] = slope
    return {"outputs": outputs, "results": results}


def _posterior_fields_1d(
    out: Path,
    cell: str,
    mesh: Mesh,
    prior: ForwardSolution,
    post: GaussianDensity,
    model: GeneratingModel,
    outputs: list,
) -> None:
    grid = _grid_1d()
    proj = projection_matrix(mesh, grid)
    for name, dens in (("u_prior", prior.density), ("u_post", post)):
        mean = proj.P @ dens.mean
        var = np.einsum("qi,ij,qj->q", proj.P, dens.cov, proj.P)
        fname = f"field_{name}_{cell}.csv"
        write_field_csv(out / fname, grid, mean, var)
        outputs.append(fname)
    z_grid = posterior_z(post, model.with_points(grid), proj)
    fname = f"field_z_post_{cell}.csv"
    write_field_csv(out / fname, grid, z_grid.mean, z_grid.variances())
    outputs.append(fname)


def _hyper_cells_driver(
    params: dict,
    seed: int,
    out: Path,
    mesh: Mesh,
    prior_solution: ForwardSolution,
    truth: TrueProcess,
    layout_fn,
    emit_fields,
    provenance: dict | None = None,
) -> dict:
    """Shared loop of the 1D/2D studies that learn (rho, sigma_d, ell_d)."""
    names = ("rho", "sigma_d", "ell_d")
    init = np.array([params["init"]["rho"], params["init"]["sigma_d"], params["init"]["ell_d"]])
    noise_sigma = params["noise_sigma"]
    outputs: list[str] = []
    summaries: dict[str, dict] = {}
    _write_json(
        out / "density_u_prior.json",
        density_json(
            prior_solution.density,
            provenance
            or {
                "mesh": {"dim": mesh.dim, "elements": mesh.n_elements, "h": mesh.h},
            },
        ),
    )
    outputs.append("density_u_prior.json")
    for n_y in params["n_y"]:
        points = layout_fn(n_y)
        proj = projection_matrix(mesh, points)

        def builder(w: HyperParamVector, _points=points, _proj=proj):
            model = GeneratingModel(
                rho=w["rho"],
                mismatch_kernel=SqExpKernel(w["sigma_d"], w["ell_d"]),
                noise_sigma=noise_sigma,
                obs_points=_points,
            )
            return prior_solution.density, model, _proj

        for n_o in params["n_o"]:
            cell = f"ny{n_y}_no{n_o}"
            obs = sample_observations(
                truth, points, n_o, substream_seed(seed, f"data_{cell}")
            )
            chain = _learn_hyperparameters(
                names,
                init,
                obs,
                builder,
                PriorSpec(),
                params["iterations"],
                substream_seed(seed, f"mcmc_{cell}"),
                params["burn_in"],
            )
            write_chain_csv(chain, out / f"chain_{cell}.csv")
            outputs.append(f"chain_{cell}.csv")
            summary = chain_summary(chain)
            _write_json(out / f"summary_{cell}.json", summary_dict(summary))
            outputs.append(f"summary_{cell}.json")
            summaries[cell] = summary_dict(summary)

            point = HyperParamVector(names, summary.mean)
            _, model, _ = builder(point)
            post = posterior_u(prior_solution.density, model, proj, obs)
            _write_json(
                out / f"density_u_post_{cell}.json",
                density_json(
                    post,
                    {
                        "rho": point["rho"],
                        "sigma_d": point["sigma_d"],
                        "ell_d": point["ell_d"],
                        "sigma_e": noise_sigma,
                        "n_y": n_y,
                        "n_o": n_o,
                    },
                ),
            )
            outputs.append(f"density_u_post_{cell}.json")
            emit_fields(out, cell, mesh, prior_solution, post, model, outputs)
    return {"outputs": outputs, "results": summaries}


def run_random_source(params: dict, seed: int, out: Path) -> dict:
    mesh = build_interval_mesh(params["n_elements"])
    prior_solution = perturbation_forward(
        mesh,
        DiffusionField(values=np.zeros(params["n_elements"])),
        SourceField(
            RandomFieldSpec(
                constant_mean(params["f_mean"]), SqExpKernel(params["sigma_f"], params["ell_f"])
            )
        ),
    )
    truth = greens_truth_1d(params)
    return _hyper_cells_driver(
        params,
        seed,
        out,
        mesh,
        prior_solution,
        truth,
        observation_layout_1d,
        _posterior_fields_1d,
        provenance={
            "mesh": {"dim": 1, "elements": params["n_elements"], "h": mesh.h},
            "source": {"mean": params["f_mean"], "sigma": params["sigma_f"], "ell": params["ell_f"]},
            "diffusivity": "fixed at one",
        },
    )


def run_random_diffusivity(params: dict, seed: int, out: Path) -> dict:
    mesh = build_interval_mesh(params["n_elements"])
    diffusion = DiffusionField(
        spec=RandomFieldSpec(
            constant_mean(params["kappa_mean"]),
            SqExpKernel(params["sigma_kappa"], params["ell_kappa"]),
        ),
        anchor_points=np.asarray(params["kappa_anchors"]).reshape(-1, 1),
        anchor_values=np.asarray(params["kappa_anchor_values"]),
    )
    prior_solution = perturbation_forward(
        mesh,
        diffusion,
        SourceField(RandomFieldSpec(constant_mean(params["f_mean"]), None)),
    )
    result = _hyper_cells_driver(
        params,
        seed,
        out,
        mesh,
        prior_solution,
        greens_truth_1d(params),
        observation_layout_1d,
        _posterior_fields_1d,
        provenance={
            "mesh": {"dim": 1, "elements": params["n_elements"], "h": mesh.h},
            "source": {"mean": params["f_mean"]},
            "diffusivity": {
                "mean": params["kappa_mean"],
                "sigma": params["sigma_kappa"],
                "ell": params["ell_kappa"],
                "anchors": params["kappa_anchors"],
            },
        },
    )
    kd = kappa_density(mesh, diffusion)
    centres = barycentres(mesh).coords
    write_field_csv(out / "field_kappa_prior.csv", centres, kd.mean, kd.variances())
    result["outputs"].append("field_kappa_prior.csv")
    return result


def run_inversion(params: dict, seed: int, out: Path) -> dict:
    """Anchor-coefficient recovery with the model reduced to data = solution + noise."""
    mesh = build_interval_mesh(params["n_elements"])
    kernel = SqExpKernel(params["basis_sigma"], params["basis_ell"])
    anchors = np.asarray(params["anchors"], dtype=float)
    basis_at_centres = anchor_basis_matrix(anchors, kernel, barycentres(mesh).coords)
    truth = anchor_truth(params)
    points = mesh.nodes.copy()  # sensors at every mesh node
    proj = projection_matrix(mesh, points)
    assembler = StiffnessAssembler(mesh)
    from scipy.sparse.linalg import splu
    import scipy.sparse as sp

    f_mean = assemble_source_mean(mesh, truth.source)
    n_u = mesh.n_free
    zero_cov = np.zeros((n_u, n_u))
    names = tuple(f"mu_a{i}" for i in range(len(anchors))) + ("sigma_e",)

    def builder(w: HyperParamVector):
        log_coeff = np.log(w.values[:-1])
        kappa_values = basis_at_centres @ log_coeff
        lu = splu(sp.csc_matrix(assembler.assemble(kappa_values)))
        prior = GaussianDensity(lu.solve(f_mean), zero_cov)
        model = GeneratingModel(
            rho=1.0, mismatch_kernel=None, noise_sigma=w["sigma_e"], obs_points=points
        )
        return prior, model, proj

    prior_spec = PriorSpec(
        gaussians={
            **{
                f"mu_a{i}": GaussianPrior(params["prior_log_means"][i], params["prior_log_var"], on_log_scale=True)
                for i in range(len(anchors))
            },
            "sigma_e": GaussianPrior(params["noise_prior_mean"], params["noise_prior_var"]),
        }
    )
    init = np.array([np.exp(m) for m in params["prior_log_means"]] + [params["noise_prior_mean"]])

    outputs: list[str] = []
    summaries: dict[str, dict] = {}
    for n_o in params["n_o"]:
        cell = f"no{n_o}"
        obs = sample_observations(truth, points, n_o, substream_seed(seed, f"data_{cell}"))
        chain = _learn_hyperparameters(
            names,
            init,
            obs,
            builder,
            prior_spec,
            params["iterations"],
            substream_seed(seed, f"mcmc_{cell}"),
            params["burn_in"],
        )
        write_chain_csv(chain, out / f"chain_{cell}.csv")
        outputs.append(f"chain_{cell}.csv")
        summary = chain_summary(chain)
        _write_json(out / f"summary_{cell}.json", summary_dict(summary))
        outputs.append(f"summary_{cell}.json")
        kept = chain.post_burn_in()
        log_mean = np.log(kept[:, :-1]).mean(axis=0)
        summaries[cell] = {
            **summary_dict(summary),
            "anchor_log_means": [float(v) for v in log_mean],
        }
        # Inferred diffusivity field against the generating one.
        grid = _grid_1d()
        basis_grid = anchor_basis_matrix(anchors, kernel, grid)
        inferred = np.exp(basis_grid @ log_mean)
        log_sd = np.log(kept[:, :-1]).std(axis=0)
        spread = np.abs(basis_grid) @ log_sd
        lo = np.exp(basis_grid @ log_mean - CI95 * spread)
        hi = np.exp(basis_grid @ log_mean + CI95 * spread)
        lines = ["x,mean,lo95,hi95,truth"]
        true_field = np.exp(basis_grid @ np.asarray(params["true_log_coefficients"]))
        for i in range(len(grid)):
            lines.append(
                ",".join(
                    [_fmt(grid[i, 0]), _fmt(inferred[i]), _fmt(lo[i]), _fmt(hi[i]), _fmt(true_field[i])]
                )
            )
        (out / f"field_mu_{cell}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.append(f"field_mu_{cell}.csv")
    return {"outputs": outputs, "results": summaries}


def run_mesh_selection(params: dict, seed: int, out: Path) -> dict:
    from .model_selection import make_candidate, rank_models, write_ranking_csv

    def forcing(pts: np.ndarray) -> np.ndarray:
        x = pts[:, 0]
        return (np.pi**2 / 5.0) * np.sin(np.pi * x) + (49.0 * np.pi**2 / 50.0) * np.sin(
            7.0 * np.pi * x
        )

    candidates = [
        make_candidate(
            f"h=1/{n_e}",
            build_interval_mesh(n_e),
            DiffusionField(values=np.zeros(n_e)),
            SourceField(RandomFieldSpec(forcing, SqExpKernel(params["sigma_f"], params["ell_f"]))),
        )
        for n_e in params["mesh_sizes"]
    ]
    outputs: list[str] = []
    results: dict[str, dict] = {}
    for n_y in params["n_y"]:
        points = observation_layout_1d(n_y)
        true_model = GeneratingModel(
            rho=params["rho"],
            mismatch_kernel=SqExpKernel(params["sigma_d"], params["ell_d"]),
            noise_sigma=params["noise_sigma"],
            obs_points=points,
        )
        template = ObservationSet(points=points, readings=np.zeros((n_y, params["n_o"])))
        for generator in candidates:
            cell = f"ny{n_y}_{generator.label.replace('/', '_').replace('=', '')}"
            model = true_model
            if params["learn_hyperparameters"]:
                from .model_selection import sample_from_marginal

                rng = np.random.default_rng(substream_seed(seed, f"learn_data_{cell}"))
                learn_obs = sample_from_marginal(
                    generator, true_model, points, params["n_o"], rng
                )
                proj = projection_matrix(generator.mesh, points)

                def builder(w: HyperParamVector, _gen=generator, _proj=proj):
                    built = GeneratingModel(
                        rho=w["rho"],
                        mismatch_kernel=SqExpKernel(w["sigma_d"], w["ell_d"]),
                        noise_sigma=params["noise_sigma"],
                        obs_points=points,
                    )
                    return _gen.forward.density, built, _proj

                chain = _learn_hyperparameters(
                    ("rho", "sigma_d", "ell_d"),
                    np.array([1.0, 0.05, 0.3]),
                    learn_obs,
                    builder,
                    PriorSpec(),
                    params["iterations"],
                    substream_seed(seed, f"mcmc_{cell}"),
                    params["burn_in"],
                )
                mean = chain_summary(chain).mean
                model = GeneratingModel(
                    rho=float(mean[0]),
                    mismatch_kernel=SqExpKernel(float(mean[1]), float(mean[2])),
                    noise_sigma=params["noise_sigma"],
                    obs_points=points,
                )
            ranking = rank_models(
                candidates,
                model,
                template,
                repeats=params["repeats"],
                rng_seed=substream_seed(seed, f"rank_{cell}"),
                generator=generator,
            )
            name = f"ranking_{cell}.csv"
            write_ranking_csv(ranking, out / name)
            outputs.append(name)
            winner = min(ranking, key=lambda r: r.rank)
            results[cell] = {
                "generator": generator.label,
                "winner": winner.label,
                "log_post_means": {r.label: r.log_post_mean for r in ranking},
            }
    return {"outputs": outputs, "results": results}


def _plate_diagonal_grid(mesh: Mesh, n: int = 161) -> np.ndarray:
    ts = np.linspace(0.0, 1.0, n)
    pts = np.column_stack([ts, ts])
    keep = []
    for p in pts:
        try:
            projection_matrix(mesh, p.reshape(1, -1))
        except ValueError:
            continue
        keep.append(p)
    return np.asarray(keep)


def run_plate(params: dict, seed: int, out: Path) -> dict:
    mesh = build_plate_with_hole(0)
    prior_solution = perturbation_forward(
        mesh,
        DiffusionField(values=np.zeros(mesh.n_elements)),
        SourceField(
            RandomFieldSpec(
                constant_mean(params["f_mean"]), SqExpKernel(params["sigma_f"], params["ell_f"])
            )
        ),
    )
    truth = plate_truth(params)
    diagonal = _plate_diagonal_grid(mesh)

    def emit_fields(out_dir, cell, mesh_, prior, post, model, outputs):
        proj = projection_matrix(mesh_, diagonal)
        for name, dens in (("u_prior", prior.density), ("u_post", post)):
            mean = proj.P @ dens.mean
            var = np.einsum("qi,ij,qj->q", proj.P, dens.cov, proj.P)
            fname = f"field_{name}_{cell}.csv"
            write_field_csv(out_dir / fname, diagonal, mean, var)
            outputs.append(fname)
        z_diag = posterior_z(post, model.with_points(diagonal), proj)
        fname = f"field_z_post_{cell}.csv"
        write_field_csv(out_dir / fname, diagonal, z_diag.mean, z_diag.variances())
        outputs.append(fname)

    return _hyper_cells_driver(
        params,
        seed,
        out,
        mesh,
        prior_solution,
        truth,
        lambda n_y: observation_layout_2d(mesh, n_y),
        emit_fields,
        provenance={
            "mesh": {"dim": 2, "elements": mesh.n_elements, "h": mesh.h},
            "source": {"mean": params["f_mean"], "sigma": params["sigma_f"], "ell": params["ell_f"]},
            "diffusivity": "fixed at one",
        },
    )


_DRIVERS = {
    "convergence": run_convergence,
    "random-source": run_random_source,
    "random-diffusivity": run_random_diffusivity,
    "inversion": run_inversion,
    "mesh-selection": run_mesh_selection,
    "plate": run_plate,
}

EXPERIMENT_IDS = tuple(sorted(_DRIVERS))


def run_experiment(config: ExperimentConfig) -> Path:
    """Run one experiment, writing outputs and a manifest into its own directory.

    Failures still leave a manifest carrying the error, then re-raise.
    """
    if config.experiment not in _DRIVERS:
        raise ValueError(
            f"unknown experiment {config.experiment!r}; choose from {EXPERIMENT_IDS}"
        )
    params = config.resolved_params()
    out = Path(config.out_dir) / config.experiment
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = {
        "experiment": config.experiment,
        "scale": config.scale,
        "seed": config.seed,
        "params": params,
    }
    try:
        report = _DRIVERS[config.experiment](params, config.seed, out)
    except Exception as err:  # partial manifest records the failure
        manifest["error"] = f"{type(err).__name__}: {err}"
        _write_json(manifest_path, manifest)
        raise
    manifest.update(report)
    _write_json(manifest_path, manifest)
    return manifest_path
