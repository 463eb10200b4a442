"""Unnormalized log densities on model space and on the joint model-data space.

Everything stays in log space; normalization constants are dropped because
they cancel in Metropolis-Hastings ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import chol_quad
from .model import ProblemSpec

Array = np.ndarray


@dataclass(frozen=True)
class HyperParams:
    """Error-splitting parameters.

    gamma is the fraction of the observation-error covariance attributed to
    model error in the joint target; rho plays the same role inside the
    proposal's minimization objective.  Both must lie strictly inside (0, 1):
    at either endpoint the corresponding joint density degenerates.
    """

    gamma: float
    rho: float

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly in (0, 1), got {self.gamma}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie strictly in (0, 1), got {self.rho}")


def _check_shape(v: Array, dim: int, name: str) -> Array:
    v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise ValueError(f"{name} must have shape ({dim},), got {v.shape}")
    return v


def log_target_marginal(p: ProblemSpec, x: Array) -> float:
    """Unnormalized log posterior of the model variables alone."""
    x = _check_shape(x, p.dim_x, "x")
    misfit = p.forward.eval(x) - p.obs
    return -0.5 * chol_quad(p.chol_x, x - p.prior_mean) - 0.5 * chol_quad(p.chol_d, misfit)


def log_target_joint(p: ProblemSpec, h: HyperParams, x: Array, d: Array) -> float:
    """Unnormalized log posterior on the joint (model, data) space.

    The data-error budget is split: a fraction gamma of obs_cov acts as model
    error tying d to g(x), the remaining (1 - gamma) ties d to the recorded
    observations.  Marginalizing d recovers log_target_marginal up to a
    constant for every gamma.
    """
    x = _check_shape(x, p.dim_x, "x")
    d = _check_shape(d, p.dim_d, "d")
    prior_term = chol_quad(p.chol_x, x - p.prior_mean)
    model_term = chol_quad(p.chol_d, p.forward.eval(x) - d) / h.gamma
    obs_term = chol_quad(p.chol_d, d - p.obs) / (1.0 - h.gamma)
    return -0.5 * (prior_term + model_term + obs_term)


def log_prior_joint(p: ProblemSpec, x_uc: Array, d_uc: Array) -> float:
    """Unnormalized log density of unconditional draws (x_uc, d_uc)."""
    x_uc = _check_shape(x_uc, p.dim_x, "x_uc")
    d_uc = _check_shape(d_uc, p.dim_d, "d_uc")
    return -0.5 * chol_quad(p.chol_x, x_uc - p.prior_mean) - 0.5 * chol_quad(
        p.chol_d, d_uc - p.obs
    )
