"""Ranking finite element models by their evidence for a data set.

Candidates differ by mesh (or forward randomness); each is scored by the
log marginal likelihood of the observation matrix under its forward prior,
plus an optional log model prior.  Ratios of model posteriors (Bayes
factors) compare two candidates; values above one favour the first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .forward import DiffusionField, ForwardSolution, SourceField, perturbation_forward
from .gp import GaussianDensity
from .inference import (
    GeneratingModel,
    ObservationSet,
    log_marginal_likelihood,
    marginal_covariance,
    projection_matrix,
)
from .linalg import chol_psd
from .mesh import Mesh

TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ModelCandidate:
    """A mesh with its forward randomness and precomputed solution density."""

    label: str
    mesh: Mesh
    diffusion: DiffusionField
    source: SourceField
    forward: ForwardSolution
    log_prior: float = 0.0


def make_candidate(
    label: str,
    mesh: Mesh,
    diffusion: DiffusionField,
    source: SourceField,
    log_prior: float = 0.0,
    **forward_kwargs,
) -> ModelCandidate:
    """Build a candidate, running its forward solve up front."""
    forward = perturbation_forward(mesh, diffusion, source, **forward_kwargs)
    return ModelCandidate(
        label=label,
        mesh=mesh,
        diffusion=diffusion,
        source=source,
        forward=forward,
        log_prior=log_prior,
    )


def log_model_posterior(
    candidate: ModelCandidate, model: GeneratingModel, obs: ObservationSet
) -> float:
    """Unnormalised log posterior of one candidate for the readings."""
    proj = projection_matrix(candidate.mesh, obs.points)
    return (
        log_marginal_likelihood(candidate.forward.density, model, proj, obs)
        + candidate.log_prior
    )


class BayesFactor(NamedTuple):
    factor: float
    log_ratio: float


def bayes_factor(
    c1: ModelCandidate, c2: ModelCandidate, model: GeneratingModel, obs: ObservationSet
) -> BayesFactor:
    """Posterior ratio of two candidates; the log ratio is exact under overflow."""
    log_ratio = log_model_posterior(c1, model, obs) - log_model_posterior(c2, model, obs)
    with np.errstate(over="ignore"):
        factor = float(np.exp(log_ratio))
    return BayesFactor(factor=factor, log_ratio=float(log_ratio))


def sample_from_marginal(
    candidate: ModelCandidate,
    model: GeneratingModel,
    points: np.ndarray,
    n_o: int,
    rng: np.random.Generator,
) -> ObservationSet:
    """Draw an observation matrix from a candidate's reading density."""
    proj = projection_matrix(candidate.mesh, points)
    density = GaussianDensity(
        model.rho * (proj.P @ candidate.forward.density.mean),
        marginal_covariance(candidate.forward.density, model, proj),
    )
    chol = chol_psd(density.cov)
    noise = rng.standard_normal((len(points), n_o))
    return ObservationSet(points=points, readings=density.mean[:, None] + chol @ noise)


@dataclass(frozen=True)
class RankedModel:
    label: str
    log_post_mean: float
    log_post_std: float
    rank: int


def rank_models(
    candidates: Sequence[ModelCandidate],
    model: GeneratingModel,
    obs: ObservationSet,
    repeats: int = 1,
    rng_seed: int = 0,
    *,
    generator: ModelCandidate | None = None,
) -> list[RankedModel]:
    """Score candidates over repeated draws of the observation matrix.

    With ``repeats == 1`` the given readings are scored as-is.  For more
    repeats a ``generator`` candidate must be named; fresh observation
    matrices of the same shape are then drawn from its reading density, so
    the reported spread reflects data variability.  Ties within tolerance
    prefer the coarser mesh.
    """
    if repeats < 1:
        raise ValueError("need at least one repeat")
    if repeats > 1 and generator is None:
        raise ValueError("repeats > 1 needs a generating candidate to sample from")

    rng = np.random.default_rng(rng_seed)
    scores = np.empty((len(candidates), repeats))
    for r in range(repeats):
        if r == 0 and generator is None:
            data = obs
        else:
            data = sample_from_marginal(generator, model, obs.points, obs.n_o, rng)
        for j, candidate in enumerate(candidates):
            scores[j, r] = log_model_posterior(candidate, model, data)

    means = scores.mean(axis=1)
    stds = scores.std(axis=1)
    order = sorted(
        range(len(candidates)),
        key=lambda j: (-means[j], -candidates[j].mesh.h),
    )
    # Within-tolerance ties go to the coarser mesh.
    for a in range(len(order) - 1):
        j, k = order[a], order[a + 1]
        if abs(means[j] - means[k]) <= TIE_TOLERANCE and candidates[k].mesh.h > candidates[j].mesh.h:
            order[a], order[a + 1] = k, j
    ranks = {j: pos + 1 for pos, j in enumerate(order)}
    return [
        RankedModel(
            label=c.label,
            log_post_mean=float(means[j]),
            log_post_std=float(stds[j]),
            rank=ranks[j],
        )
        for j, c in enumerate(candidates)
    ]


def write_ranking_csv(ranking: Sequence[RankedModel], path) -> None:
    import csv
    from pathlib import Path

    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["candidate", "log_post_mean", "log_post_std", "rank"])
        for row in ranking:
            writer.writerow(
                [row.label, f"{row.log_post_mean:.17g}", f"{row.log_post_std:.17g}", row.rank]
            )
