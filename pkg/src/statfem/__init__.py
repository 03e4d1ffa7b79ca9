"""Probabilistic finite elements with Bayesian data conditioning.

Forward solves of Poisson problems with Gaussian-process random inputs,
closed-form conditioning of the solution on repeated sensor readings,
hyperparameter learning by random-walk Metropolis in log coordinates, and
evidence-based comparison of candidate meshes.
"""

from .forward import (
    DiffusionField,
    ForwardSolution,
    SourceField,
    assemble_source_cov_exact,
    assemble_source_cov_lumped,
    assemble_source_mean,
    assemble_system,
    forward_fixed_kappa,
    greens_variance_1d,
    mc_forward_oracle,
    perturbation_forward,
    system_matrix_derivative,
)
from .gp import (
    GaussianDensity,
    RandomFieldSpec,
    SqExpKernel,
    anchor_basis,
    anchor_basis_matrix,
    constant_mean,
    cov_matrix,
    gp_condition,
    gp_sample,
    kernel_eval,
)
from .hyperlearn import (
    Chain,
    GaussianPrior,
    HyperParamVector,
    PriorSpec,
    chain_summary,
    log_posterior_w,
    metropolis_sample,
    tune_proposal,
)
from .inference import (
    GeneratingModel,
    ObservationSet,
    ProjectionMatrix,
    log_marginal_likelihood,
    mismatch_cov,
    posterior_u,
    posterior_z,
    predictive_density,
    projection_matrix,
    woodbury_posterior_cov,
)
from .linalg import NumericalError
from .mesh import (
    BarycentreSet,
    Mesh,
    barycentres,
    build_interval_mesh,
    build_plate_with_hole,
    quadrisect,
    read_mesh_file,
    write_mesh_file,
)
from .model_selection import (
    BayesFactor,
    ModelCandidate,
    bayes_factor,
    log_model_posterior,
    make_candidate,
    rank_models,
)

__version__ = "0.1.0"
