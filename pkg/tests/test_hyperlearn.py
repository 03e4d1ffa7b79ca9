import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statfem.gp import GaussianDensity, SqExpKernel
from statfem.hyperlearn import (
    Chain,
    GaussianPrior,
    HyperParamVector,
    PriorSpec,
    chain_summary,
    log_posterior_w,
    metropolis_sample,
    read_chain_csv,
    summary_dict,
    tune_proposal,
    tune_with_warm_start,
    write_chain_csv,
)
from statfem.inference import (
    GeneratingModel,
    ObservationSet,
    ProjectionMatrix,
    log_marginal_likelihood,
)


def lognormal_log_density(w):
    # density over w of exp(N(0,1)): the log-sample moments are (0, 1)
    lw = np.log(w[0])
    return -0.5 * lw**2 - lw


def quadratic_log_density(center):
    def target(w):
        return -0.5 * np.sum((np.log(w) - center) ** 2)

    return target


def test_lognormal_target_moments():
    chain = metropolis_sample(lognormal_log_density, [1.0], 20_000, 2.4, rng_seed=11)
    logs = np.log(chain.post_burn_in()[:, 0])
    assert abs(logs.mean()) < 0.05
    assert abs(logs.var() - 1.0) < 0.1


def test_tiny_proposal_accepts_everything():
    chain = metropolis_sample(lognormal_log_density, [1.0], 500, 1e-7, rng_seed=3)
    assert chain.acceptance_ratio > 0.999
    assert np.abs(np.log(chain.samples) - 0.0).max() < 1e-4


def test_chain_deterministic_and_seed_sensitive():
    a = metropolis_sample(lognormal_log_density, [1.0], 300, 1.0, rng_seed=5)
    b = metropolis_sample(lognormal_log_density, [1.0], 300, 1.0, rng_seed=5)
    c = metropolis_sample(lognormal_log_density, [1.0], 300, 1.0, rng_seed=6)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.log_posts, b.log_posts)
    assert not np.array_equal(a.samples, c.samples)


def test_acceptance_invariant_under_constant_shift():
    shifted = lambda w: lognormal_log_density(w) + 987.654
    a = metropolis_sample(lognormal_log_density, [1.0], 400, 1.0, rng_seed=8)
    b = metropolis_sample(shifted, [1.0], 400, 1.0, rng_seed=8)
    assert np.array_equal(a.accepted, b.accepted)
    assert np.array_equal(a.samples, b.samples)


def test_invalid_start_rejected():
    with pytest.raises(ValueError):
        metropolis_sample(lambda w: -np.inf, [1.0], 10, 0.5, rng_seed=0)
    with pytest.raises(ValueError):
        metropolis_sample(lognormal_log_density, [-1.0], 10, 0.5, rng_seed=0)
    with pytest.raises(ValueError):
        metropolis_sample(lognormal_log_density, [1.0], 0, 0.5, rng_seed=0)


@given(
    st.integers(min_value=0, max_value=100_000),
    st.floats(min_value=-1.0, max_value=1.0),
    st.integers(min_value=1, max_value=4),
)
@settings(max_examples=20, deadline=None)
def test_samples_always_positive(seed, center, dim):
    chain = metropolis_sample(
        quadratic_log_density(np.full(dim, center)),
        np.full(dim, 0.5),
        200,
        0.8,
        rng_seed=seed,
    )
    assert np.all(chain.samples > 0)


def test_tune_proposal_reaches_target_band():
    sigma = tune_proposal(lognormal_log_density, [1.0], 0.25, rng_seed=7)
    chain = metropolis_sample(lognormal_log_density, [1.0], 4000, sigma, rng_seed=9)
    assert 0.15 <= chain.acceptance_ratio <= 0.35


def test_tuned_scale_shrinks_with_dimension():
    one = tune_proposal(quadratic_log_density(np.zeros(1)), np.ones(1), 0.25, rng_seed=2)
    five = tune_proposal(quadratic_log_density(np.zeros(5)), np.ones(5), 0.25, rng_seed=2)
    assert one > five


def test_tune_warm_start_moves_toward_mode():
    target = quadratic_log_density(np.full(2, 3.0))  # mode far from the start
    _, state = tune_with_warm_start(target, np.ones(2) * 0.01, 0.25, rng_seed=4)
    assert np.abs(np.log(state) - 3.0).max() < np.abs(np.log(0.01) - 3.0)


def test_chain_summary_constant_chain():
    n = 100
    chain = Chain(
        names=("a",),
        samples=np.full((n, 1), 2.5),
        log_posts=np.zeros(n),
        accepted=np.zeros(n, dtype=bool),
        acceptance_ratio=0.0,
    )
    summary = chain_summary(chain)
    assert summary.mean[0] == 2.5
    assert summary.std[0] == 0.0
    counts, edges = summary.histograms[0]
    assert len(counts) == 50

    empty = Chain(
        names=("a",),
        samples=np.full((10, 1), 2.5),
        log_posts=np.zeros(10),
        accepted=np.zeros(10, dtype=bool),
        acceptance_ratio=0.0,
        burn_in_fraction=1.0,
    )
    with pytest.raises(ValueError):
        chain_summary(empty)


def test_chain_csv_roundtrip(tmp_path):
    chain = metropolis_sample(
        quadratic_log_density(np.zeros(2)), [1.0, 2.0], 50, 0.7, rng_seed=1,
        names=("rho", "sigma_d"),
    )
    path = tmp_path / "chain.csv"
    write_chain_csv(chain, path)
    header = path.read_text().splitlines()[0]
    assert header == "iter,rho,sigma_d,log_post,accepted"
    back = read_chain_csv(path)
    assert back.names == ("rho", "sigma_d")
    assert np.array_equal(back.samples, chain.samples)
    assert np.array_equal(back.log_posts, chain.log_posts)
    assert np.array_equal(back.accepted, chain.accepted)
    payload = summary_dict(chain_summary(back))
    assert set(payload) == {"names", "mean", "std", "acceptance_ratio", "burn_in_fraction", "seed"}


def _tiny_inference_problem():
    prior = GaussianDensity([0.2, -0.1], np.array([[0.3, 0.05], [0.05, 0.2]]))
    pts = np.array([[0.25], [0.75]])
    proj = ProjectionMatrix(P=np.array([[1.0, 0.0], [0.0, 1.0]]))
    obs = ObservationSet(points=pts, readings=np.array([[0.25, 0.3], [-0.2, -0.1]]))

    def builder(w):
        model = GeneratingModel(
            rho=w["rho"],
            mismatch_kernel=SqExpKernel(w["sigma_d"], w["ell_d"]),
            noise_sigma=0.05,
            obs_points=pts,
        )
        return prior, model, proj

    return prior, proj, obs, builder


def test_log_posterior_flat_prior_equals_marginal_likelihood():
    prior, proj, obs, builder = _tiny_inference_problem()
    w = HyperParamVector(("rho", "sigma_d", "ell_d"), [0.9, 0.1, 0.4])
    _, model, _ = builder(w)
    expected = log_marginal_likelihood(prior, model, proj, obs)
    assert log_posterior_w(w, obs, builder, PriorSpec()) == expected


def test_log_posterior_gaussian_priors_add_up():
    _, _, obs, builder = _tiny_inference_problem()
    w = HyperParamVector(("rho", "sigma_d", "ell_d"), [0.9, 0.1, 0.4])
    flat = log_posterior_w(w, obs, builder, PriorSpec())
    spec = PriorSpec(
        gaussians={
            "rho": GaussianPrior(1.0, 0.01),
            "ell_d": GaussianPrior(np.log(0.5), 0.0025, on_log_scale=True),
        }
    )
    expected_prior = (
        -0.5 * (0.9 - 1.0) ** 2 / 0.01
        - 0.5 * np.log(2 * np.pi * 0.01)
        - 0.5 * (np.log(0.4) - np.log(0.5)) ** 2 / 0.0025
        - 0.5 * np.log(2 * np.pi * 0.0025)
    )
    assert log_posterior_w(w, obs, builder, spec) == pytest.approx(flat + expected_prior)


def test_log_posterior_builder_failure_rejects():
    _, _, obs, _ = _tiny_inference_problem()

    def broken(w):
        raise ValueError("cannot build")

    w = HyperParamVector(("rho",), [1.0])
    assert log_posterior_w(w, obs, broken, PriorSpec()) == -np.inf


def test_hyper_param_vector_validation():
    with pytest.raises(ValueError):
        HyperParamVector(("a", "a"), [1.0, 2.0])
    with pytest.raises(ValueError):
        HyperParamVector(("a", "b"), [1.0, -2.0])
    w = HyperParamVector(("a", "b"), [1.0, 2.0])
    assert w["b"] == 2.0
