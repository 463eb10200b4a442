"""Optimization-based independence Metropolis sampling on augmented state spaces.

The package targets Bayesian inverse problems with Gaussian priors and
additive Gaussian observation errors.  Candidates come from randomized
nonlinear least-squares minimization; carrying the randomized data variables
in the chain state makes the proposal density computable in closed form from
a change of variables, so the accept test is exact even for multimodal
posteriors.
"""

from .densities import HyperParams, log_prior_joint, log_target_joint, log_target_marginal
from .model import (
    Anamorphosis,
    ForwardModel,
    ProblemSpec,
    exponential_anamorphosis,
    forward_model,
    get_problem,
    make_example1,
    make_example2,
    make_example3_transformed,
    make_gauss_linear,
    make_linear_problem,
)
from .optimizer import OptResult, OptSettings, augmented_objective, eliminate_d, minimize
from .oracle import (
    GridDensity,
    SampleGridReport,
    compare_samples_to_grid,
    conjugate_posterior,
    grid_from_log_density,
    grid_joint_1d,
    grid_marginal,
    grid_proposal_1d,
)
from .proposal import (
    CandidateState,
    DegenerateProposalError,
    JacobianBlocks,
    JacobianMode,
    inverse_transform,
    jacobian_blocks,
    linear_transition_matrix,
    log_abs_det_jacobian,
    propose,
)
from .sampler import (
    ChainRecord,
    ChainState,
    QuadSettings,
    init_state,
    mh_accept_prob,
    run_chain_augmented,
    run_chain_legacy_1d,
)

__all__ = [
    "Anamorphosis",
    "CandidateState",
    "ChainRecord",
    "ChainState",
    "DegenerateProposalError",
    "ForwardModel",
    "GridDensity",
    "HyperParams",
    "JacobianBlocks",
    "JacobianMode",
    "OptResult",
    "OptSettings",
    "ProblemSpec",
    "QuadSettings",
    "SampleGridReport",
    "augmented_objective",
    "compare_samples_to_grid",
    "conjugate_posterior",
    "eliminate_d",
    "exponential_anamorphosis",
    "forward_model",
    "get_problem",
    "grid_from_log_density",
    "grid_joint_1d",
    "grid_marginal",
    "grid_proposal_1d",
    "init_state",
    "inverse_transform",
    "jacobian_blocks",
    "linear_transition_matrix",
    "log_abs_det_jacobian",
    "log_prior_joint",
    "log_target_joint",
    "log_target_marginal",
    "make_example1",
    "make_example2",
    "make_example3_transformed",
    "make_gauss_linear",
    "make_linear_problem",
    "mh_accept_prob",
    "minimize",
    "propose",
    "run_chain_augmented",
    "run_chain_legacy_1d",
]

__version__ = "0.1.0"
