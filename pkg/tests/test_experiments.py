import json
from pathlib import Path

import numpy as np
import pytest

from statfem.cli import main as cli_main
from statfem.experiments import (
    CI95,
    ExperimentConfig,
    anchor_truth,
    default_params,
    greens_truth_1d,
    observation_layout_1d,
    observation_layout_2d,
    response_density,
    run_experiment,
    sample_observations,
    substream_seed,
    write_field_csv,
)
from statfem.forward import kappa_density
from statfem.gp import SqExpKernel
from statfem.inference import (
    GeneratingModel,
    ObservationSet,
    log_marginal_likelihood,
    projection_matrix,
)
from statfem.mesh import build_interval_mesh, build_plate_with_hole
from statfem.gp import GaussianDensity


def test_layout_1d_nesting_and_symmetry():
    p4 = observation_layout_1d(4)[:, 0]
    p11 = observation_layout_1d(11)[:, 0]
    p33 = observation_layout_1d(33)[:, 0]
    assert set(p4) <= set(p11) <= set(p33)
    for pts in (p4, p11, p33):
        assert np.allclose(sorted(pts), sorted(1.0 - pts))  # symmetric about 1/2
        assert pts.min() > 0.0 and pts.max() < 1.0
    assert len(p33) == len(set(p33)) == 33
    with pytest.raises(ValueError):
        observation_layout_1d(7)


def test_layout_2d_properties():
    mesh = build_plate_with_hole(0)
    p32 = observation_layout_2d(mesh, 32)
    p64 = observation_layout_2d(mesh, 64)
    p125 = observation_layout_2d(mesh, 125)
    assert len(p125) == 125 and len(np.unique(p125, axis=0)) == 125

    def as_set(pts):
        return {tuple(p) for p in pts}

    assert as_set(p32) <= as_set(p64) <= as_set(p125)
    node_set = as_set(mesh.nodes)
    assert as_set(p64) <= node_set
    with pytest.raises(ValueError):
        observation_layout_2d(mesh, 50)


def test_sample_observations_deterministic():
    params = default_params("random-source", "desk")
    params["truth_elements"] = 64
    truth = greens_truth_1d(params)
    pts = observation_layout_1d(4)
    a = sample_observations(truth, pts, 5, rng_seed=3)
    b = sample_observations(truth, pts, 5, rng_seed=3)
    assert np.array_equal(a.readings, b.readings)
    with pytest.raises(ValueError):
        sample_observations(truth, pts, 0, rng_seed=3)


def test_sample_observations_covariance_converges():
    params = default_params("random-source", "desk")
    params["truth_elements"] = 64
    params["noise_sigma"] = 1e-6  # effectively noiseless readings
    truth = greens_truth_1d(params)
    pts = observation_layout_1d(4)
    density = response_density(truth, pts)
    obs = sample_observations(truth, pts, 20_000, rng_seed=5)
    emp = np.cov(obs.readings)
    scale = np.abs(density.cov).max()
    assert np.abs(emp - density.cov).max() < 0.05 * scale


def test_greens_truth_mean_matches_target_curve():
    params = default_params("random-source", "desk")
    truth = greens_truth_1d(params)
    pts = observation_layout_1d(33)
    density = response_density(truth, pts)
    x = pts[:, 0]
    target = np.sin(np.pi * x) / 5.0 + np.sin(7.0 * np.pi * x) / 50.0
    assert np.abs(density.mean - target).max() < 5e-5  # discretisation floor


def test_default_noise_variance_value():
    params = default_params("random-source", "paper")
    assert params["noise_sigma"] ** 2 == pytest.approx(2.5e-5)


def test_anchor_truth_coefficients():
    params = default_params("inversion", "desk")
    expected = np.log([0.7, 1.0, 0.7, 0.4, 0.7])
    assert np.allclose(params["true_log_coefficients"], expected)
    truth = anchor_truth(params)
    # interpolated field reproduces the coefficients at the anchors
    from statfem.gp import anchor_basis_matrix

    kernel = SqExpKernel(params["basis_sigma"], params["basis_ell"])
    from statfem.mesh import barycentres

    basis = anchor_basis_matrix(params["anchors"], kernel, barycentres(truth.mesh).coords)
    recon = np.linalg.lstsq(basis, truth.diffusion.values, rcond=None)[0]
    assert np.allclose(recon, expected, atol=1e-8)


def test_inversion_reduction_identity():
    # With no mismatch and unit scaling the readings are the solution plus
    # noise: the evidence must equal the plain iid Gaussian value.
    mesh = build_interval_mesh(8)
    pts = mesh.nodes.copy()
    proj = projection_matrix(mesh, pts)
    rng = np.random.default_rng(2)
    u = rng.standard_normal(mesh.n_free)
    sigma_e = 0.07
    prior = GaussianDensity(u, np.zeros((mesh.n_free, mesh.n_free)))
    model = GeneratingModel(1.0, None, sigma_e, obs_points=pts)
    readings = (proj.P @ u)[:, None] + sigma_e * rng.standard_normal((len(pts), 4))
    obs = ObservationSet(points=pts, readings=readings)
    got = log_marginal_likelihood(prior, model, proj, obs)
    resid = readings - (proj.P @ u)[:, None]
    expected = -0.5 * (
        resid.size * np.log(2 * np.pi * sigma_e**2) + np.sum(resid**2) / sigma_e**2
    )
    assert got == pytest.approx(expected, rel=1e-12)


def test_conditioned_kappa_band_pinched_at_anchors():
    params = default_params("random-diffusivity", "desk")
    from statfem.forward import DiffusionField
    from statfem.gp import RandomFieldSpec, constant_mean

    mesh = build_interval_mesh(params["n_elements"])
    field = DiffusionField(
        spec=RandomFieldSpec(
            constant_mean(params["kappa_mean"]),
            SqExpKernel(params["sigma_kappa"], params["ell_kappa"]),
        ),
        anchor_points=np.asarray(params["kappa_anchors"]).reshape(-1, 1),
        anchor_values=np.asarray(params["kappa_anchor_values"]),
    )
    kd = kappa_density(mesh, field)
    from statfem.mesh import barycentres

    centres = barycentres(mesh).coords[:, 0]
    for anchor in params["kappa_anchors"]:
        idx = np.argmin(np.abs(centres - anchor))
        assert kd.cov[idx, idx] <= 1e-6  # barycentres sit close to the anchors
    assert kd.variances().max() > 1e-3


def test_field_csv_band_contains_mean(tmp_path):
    path = tmp_path / "field.csv"
    xs = np.linspace(0, 1, 6).reshape(-1, 1)
    mean = np.sin(xs[:, 0])
    var = np.full(6, 0.04)
    write_field_csv(path, xs, mean, var)
    rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
    for row in rows:
        x, m, lo, hi = map(float, row)
        assert lo <= m <= hi
        assert hi - m == pytest.approx(CI95 * 0.2, rel=1e-12)


def test_substream_seeds_are_stable_and_distinct():
    a = substream_seed(7, "data_x")
    assert a == substream_seed(7, "data_x")
    assert a != substream_seed(7, "data_y")
    assert a != substream_seed(8, "data_x")


def test_run_experiment_reproducible_and_failsafe(tmp_path):
    overrides = {"mesh_sizes": [8, 16], "lengthscales": [0.5]}
    cfg1 = ExperimentConfig("convergence", "desk", seed=3, out_dir=tmp_path / "a", overrides=overrides)
    cfg2 = ExperimentConfig("convergence", "desk", seed=3, out_dir=tmp_path / "b", overrides=overrides)
    m1, m2 = run_experiment(cfg1), run_experiment(cfg2)
    for name in json.loads(m1.read_text())["outputs"]:
        assert (tmp_path / "a" / "convergence" / name).read_bytes() == (
            tmp_path / "b" / "convergence" / name
        ).read_bytes()

    bad = ExperimentConfig("convergence", "desk", out_dir=tmp_path / "c", overrides={"bogus": 1})
    with pytest.raises(ValueError):
        run_experiment(bad)
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig("not-an-experiment", out_dir=tmp_path))


def test_failed_run_writes_partial_manifest(tmp_path):
    cfg = ExperimentConfig(
        "convergence",
        "desk",
        out_dir=tmp_path,
        overrides={"mesh_sizes": [8], "quad_points": 0, "lengthscales": [0.5]},
    )
    with pytest.raises(ValueError):
        run_experiment(cfg)
    manifest = json.loads((tmp_path / "convergence" / "manifest.json").read_text())
    assert "error" in manifest


def test_cli_run_and_tools(tmp_path, monkeypatch, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"mesh_sizes": [8, 16], "lengthscales": [0.25]}))
    monkeypatch.setenv("STATFEM_SEED", "99")
    code = cli_main(
        [
            "run",
            "convergence",
            "--config",
            str(config),
            "--scale",
            "desk",
            "--out",
            str(tmp_path / "out"),
        ]
    )
    assert code == 0
    manifest = json.loads((tmp_path / "out" / "convergence" / "manifest.json").read_text())
    assert manifest["seed"] == 99  # environment beats config and flags

    mesh_file = tmp_path / "m.msh"
    from statfem.mesh import write_mesh_file

    write_mesh_file(build_interval_mesh(4), mesh_file)
    assert cli_main(["mesh", "info", str(mesh_file)]) == 0
    out = capsys.readouterr().out
    assert "elements: 4" in out

    assert cli_main(["mesh", "info", str(tmp_path / "missing.msh")]) == 1
