"""Learning positive hyperparameters of the generating model by MCMC.

The posterior over hyperparameters is proportional to the marginal
likelihood of the readings times the prior.  Sampling runs in log
coordinates so every proposal stays positive; the acceptance rule carries
the log-transform Jacobian, hence a flat prior remains flat on the original
scale.  Point estimates are post-burn-in chain means.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .gp import GaussianDensity
from .inference import (
    GeneratingModel,
    ObservationSet,
    ProjectionMatrix,
    log_marginal_likelihood,
)
from .linalg import NumericalError

DEFAULT_BURN_IN = 0.3
HISTOGRAM_BINS = 50

ModelBuilder = Callable[
    ["HyperParamVector"], tuple[GaussianDensity, GeneratingModel, ProjectionMatrix]
]


@dataclass(frozen=True)
class HyperParamVector:
    """Named positive hyperparameters with a fixed ordering."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if len(self.names) != len(values):
            raise ValueError("one value per name required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("parameter names must be unique")
        if np.any(values <= 0):
            raise ValueError("hyperparameters must be strictly positive")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])


@dataclass(frozen=True)
class GaussianPrior:
    """Gaussian prior on a parameter, optionally on its logarithm.

    ``on_log_scale=True`` states the density over ``ln w``; combined with
    the sampler's Jacobian this is exactly a Gaussian prior on the
    log-parameter (equivalently a lognormal prior on the parameter itself).
    """

    mean: float
    var: float
    on_log_scale: bool = False

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("prior variance must be positive")


@dataclass(frozen=True)
class PriorSpec:
    """Per-parameter priors; parameters without an entry are flat."""

    gaussians: Mapping[str, GaussianPrior] = field(default_factory=dict)

    def log_density(self, names: tuple[str, ...], values: np.ndarray) -> float:
        total = 0.0
        for name, value in zip(names, values):
            prior = self.gaussians.get(name)
            if prior is None:
                continue  # flat on the original scale
            arg = np.log(value) if prior.on_log_scale else value
            total += -0.5 * (arg - prior.mean) ** 2 / prior.var - 0.5 * np.log(
                2.0 * np.pi * prior.var
            )
        return float(total)


FLAT_PRIOR = PriorSpec()


def log_posterior_w(
    w: HyperParamVector,
    obs: ObservationSet,
    model_builder: ModelBuilder,
    prior: PriorSpec = FLAT_PRIOR,
) -> float:
    """Unnormalised log posterior of the hyperparameters.

    Rebuilds the generating model (and, when the builder chooses, the
    forward prior) at ``w`` and evaluates the marginal likelihood of the
    readings.  Builder or factorisation failures map to ``-inf`` so the
    sampler simply rejects the move.
    """
    try:
        prior_density, model, proj = model_builder(w)
        loglik = log_marginal_likelihood(prior_density, model, proj, obs)
    except (NumericalError, np.linalg.LinAlgError, ValueError, FloatingPointError):
        return -np.inf
    if not np.isfinite(loglik):
        return -np.inf
    return loglik + prior.log_density(w.names, w.values)


@dataclass(frozen=True)
class Chain:
    """MCMC output on the original (positive) scale."""

    names: tuple[str, ...]
    samples: np.ndarray
    log_posts: np.ndarray
    accepted: np.ndarray
    acceptance_ratio: float
    burn_in_fraction: float = DEFAULT_BURN_IN
    seed: int | None = None

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def post_burn_in(self) -> np.ndarray:
        start = int(self.burn_in_fraction * self.n_samples)
        return self.samples[start:]


def metropolis_sample(
    log_target: Callable[[np.ndarray], float],
    init: np.ndarray,
    n_iter: int,
    proposal_sigma: float,
    rng_seed: int,
    *,
    names: tuple[str, ...] | None = None,
    burn_in_fraction: float = DEFAULT_BURN_IN,
) -> Chain:
    """Random-walk Metropolis over positive parameters in log coordinates.

    ``log_target`` is the log density over the original-scale vector.  The
    walk proposes isotropic Gaussian steps on the log scale and accepts with
    the usual ratio plus the sum-of-logs Jacobian terms, so positivity is
    automatic and no proposal is wasted on the boundary.  Fixed seeds give
    bit-identical chains.
    """
    init = np.atleast_1d(np.asarray(init, dtype=float))
    if n_iter < 1:
        raise ValueError("need at least one iteration")
    if not proposal_sigma > 0:
        raise ValueError("proposal scale must be positive")
    if np.any(init <= 0):
        raise ValueError("initial state must be strictly positive")
    current_log = np.log(init)
    current_target = log_target(init)
    if not np.isfinite(current_target):
        raise ValueError("log target is not finite at the initial state")

    rng = np.random.default_rng(rng_seed)
    dim = len(init)
    samples = np.empty((n_iter, dim))
    log_posts = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=bool)
    n_accept = 0
    for i in range(n_iter):
        proposal_log = current_log + proposal_sigma * rng.standard_normal(dim)
        proposal = np.exp(proposal_log)
        proposal_target = log_target(proposal)
        jump = (proposal_target + proposal_log.sum()) - (current_target + current_log.sum())
        alpha = min(0.0, jump)
        if np.log(rng.uniform()) < alpha:
            current_log = proposal_log
            current_target = proposal_target
            n_accept += 1
            accepted[i] = True
        samples[i] = np.exp(current_log)
        log_posts[i] = current_target
    names = names if names is not None else tuple(f"w{i}" for i in range(dim))
    return Chain(
        names=names,
        samples=samples,
        log_posts=log_posts,
        accepted=accepted,
        acceptance_ratio=n_accept / n_iter,
        burn_in_fraction=burn_in_fraction,
        seed=rng_seed,
    )


def tune_with_warm_start(
    log_target: Callable[[np.ndarray], float],
    init: np.ndarray,
    target_acceptance: float = 0.25,
    rng_seed: int = 0,
    *,
    initial_sigma: float = 0.1,
    pilot_iterations: int = 500,
    max_rounds: int = 20,
) -> tuple[float, np.ndarray]:
    """Tune the proposal scale and return it with the last pilot state.

    Each pilot continues from where the previous one stopped, so the scale
    settles in the high-density region rather than in the transient away
    from the starting point.  The final state makes a good production-chain
    start.
    """
    if not 0.0 < target_acceptance < 1.0:
        raise ValueError("target acceptance must lie in (0, 1)")
    sigma = initial_sigma
    state = np.atleast_1d(np.asarray(init, dtype=float))
    seeds = np.random.SeedSequence(rng_seed).generate_state(max_rounds)
    for round_seed in seeds:
        pilot = metropolis_sample(log_target, state, pilot_iterations, sigma, int(round_seed))
        state = pilot.samples[-1]
        if pilot.acceptance_ratio > target_acceptance + 0.1:
            sigma *= 1.5
        elif pilot.acceptance_ratio < target_acceptance - 0.1:
            sigma *= 0.6
        else:
            return sigma, state
    warnings.warn(
        f"proposal tuning did not settle in {max_rounds} rounds; using sigma={sigma:.3g}",
        RuntimeWarning,
    )
    return sigma, state


def tune_proposal(
    log_target: Callable[[np.ndarray], float],
    init: np.ndarray,
    target_acceptance: float = 0.25,
    rng_seed: int = 0,
    *,
    initial_sigma: float = 0.1,
    pilot_iterations: int = 500,
    max_rounds: int = 20,
) -> float:
    """Pick a proposal scale by short pilot chains.

    Multiplies the scale by 1.5 while acceptance is more than 0.1 above the
    target and by 0.6 while more than 0.1 below; gives up after
    ``max_rounds`` with a warning.
    """
    sigma, _ = tune_with_warm_start(
        log_target,
        init,
        target_acceptance,
        rng_seed,
        initial_sigma=initial_sigma,
        pilot_iterations=pilot_iterations,
        max_rounds=max_rounds,
    )
    return sigma


@dataclass(frozen=True)
class ChainSummary:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    histograms: tuple[tuple[np.ndarray, np.ndarray], ...]
    acceptance_ratio: float
    burn_in_fraction: float
    seed: int | None


def chain_summary(chain: Chain, bins: int = HISTOGRAM_BINS) -> ChainSummary:
    """Post-burn-in mean, standard deviation and fixed-bin histograms."""
    kept = chain.post_burn_in()
    if kept.shape[0] == 0:
        raise ValueError("burn-in removed every sample")
    histograms = tuple(
        np.histogram(kept[:, j], bins=bins, density=True) for j in range(kept.shape[1])
    )
    return ChainSummary(
        names=chain.names,
        mean=kept.mean(axis=0),
        std=kept.std(axis=0),
        histograms=histograms,
        acceptance_ratio=chain.acceptance_ratio,
        burn_in_fraction=chain.burn_in_fraction,
        seed=chain.seed,
    )


def write_chain_csv(chain: Chain, path) -> None:
    """Chain file: ``iter,<param names...>,log_post,accepted`` per row."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iter", *chain.names, "log_post", "accepted"])
        for i in range(chain.n_samples):
            writer.writerow(
                [
                    i,
                    *(f"{v:.17g}" for v in chain.samples[i]),
                    f"{chain.log_posts[i]:.17g}",
                    int(chain.accepted[i]),
                ]
            )


def read_chain_csv(path, burn_in_fraction: float = DEFAULT_BURN_IN) -> Chain:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if header[0] != "iter" or header[-2:] != ["log_post", "accepted"]:
            raise ValueError(f"{path}: not a chain file")
        names = tuple(header[1:-2])
        rows = list(reader)
    samples = np.array([[float(v) for v in row[1:-2]] for row in rows])
    log_posts = np.array([float(row[-2]) for row in rows])
    accepted = np.array([bool(int(row[-1])) for row in rows])
    return Chain(
        names=names,
        samples=samples,
        log_posts=log_posts,
        accepted=accepted,
        acceptance_ratio=float(accepted.mean()) if len(accepted) else 0.0,
        burn_in_fraction=burn_in_fraction,
    )


def summary_dict(summary: ChainSummary) -> dict:
    """JSON-ready summary payload."""
    return {
        "names": list(summary.names),
        "mean": [float(v) for v in summary.mean],
        "std": [float(v) for v in summary.std],
        "acceptance_ratio": summary.acceptance_ratio,
        "burn_in_fraction": summary.burn_in_fraction,
        "seed": summary.seed,
    }
