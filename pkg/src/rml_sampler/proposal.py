"""Candidate generation and the change-of-variables proposal density.

A candidate is the minimizer of the augmented objective seeded by one
unconditional draw.  Its density follows from the closed-form inverse map
back to the draw and the determinant of that map's Jacobian, assembled in
block form from the forward model's first (and optionally second)
derivatives.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .densities import HyperParams, _check_shape, log_prior_joint, log_target_joint
from .linalg import chol_solve
from .model import ProblemSpec
from .optimizer import OptResult, OptSettings, minimize

Array = np.ndarray


class JacobianMode(enum.Enum):
    """How the determinant correction is handled.

    FULL keeps the residual-weighted second-derivative term exact.
    GAUSS_NEWTON drops that term.  NONE computes no density at all; it marks
    a run that accepts every converged candidate, and on a CandidateState it
    flags that no usable density is attached (the accept test must treat the
    candidate as having zero proposal probability).
    """

    FULL = "full"
    GAUSS_NEWTON = "gauss-newton"
    NONE = "none"

    @classmethod
    def from_name(cls, name: str) -> "JacobianMode":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(
                f"unknown jacobian mode {name!r}; expected one of "
                f"{[m.value for m in cls]}"
            ) from None


class DegenerateProposalError(RuntimeError):
    """Raised when the proposal map's Jacobian is exactly singular."""


@dataclass(frozen=True)
class JacobianBlocks:
    """Blocks of the Jacobian of the map (x_star, d_star) -> (x_uc, d_uc)."""

    dxuc_dxstar: Array
    dxuc_ddstar: Array
    dduc_dxstar: Array
    dduc_ddstar: Array

    def assemble(self) -> Array:
        return np.block(
            [
                [self.dxuc_dxstar, self.dxuc_ddstar],
                [self.dduc_dxstar, self.dduc_ddstar],
            ]
        )


@dataclass(frozen=True)
class CandidateState:
    """A proposed (x_star, d_star) pair with its cached log densities.

    jacobian_mode records which determinant variant produced log_q; NONE
    means no density is attached, either because the run skips the accept
    test or because the candidate is unusable (optimizer failure or singular
    Jacobian) and must be rejected.
    """

    x_star: Array
    d_star: Array
    log_q: float
    log_pi_joint: float
    log_abs_det_j: float
    jacobian_mode: JacobianMode
    opt: OptResult


def inverse_transform(
    p: ProblemSpec, h: HyperParams, x_star: Array, d_star: Array
) -> tuple[Array, Array]:
    """Recover the unconditional draw that maps to (x_star, d_star).

    Closed form from the stationarity conditions; exact for any point, not
    only for optimizer output.
    """
    x_star = _check_shape(x_star, p.dim_x, "x_star")
    d_star = _check_shape(d_star, p.dim_d, "d_star")
    gx = p.forward.eval(x_star)
    G = p.forward.jacobian(x_star)
    x_uc = x_star + p.prior_cov @ (G.T @ chol_solve(p.chol_d, gx - d_star)) / h.rho
    d_uc = d_star / h.rho - ((1.0 - h.rho) / h.rho) * gx
    return x_uc, d_uc


def jacobian_blocks(
    p: ProblemSpec,
    h: HyperParams,
    x_star: Array,
    d_star: Array,
    mode: JacobianMode = JacobianMode.FULL,
) -> JacobianBlocks:
    """Analytic blocks of the inverse map's Jacobian at (x_star, d_star).

    The model-model block carries G^T C_d^{-1} G plus, in FULL mode, the
    second-derivative term weighted by the residual g(x_star) - d_star.  The
    other three blocks are the same in both modes.
    """
    if mode is JacobianMode.NONE:
        raise ValueError("jacobian_blocks requires mode FULL or GAUSS_NEWTON")
    x_star = _check_shape(x_star, p.dim_x, "x_star")
    d_star = _check_shape(d_star, p.dim_d, "d_star")
    rho = h.rho
    G = p.forward.jacobian(x_star)
    cd_inv_g = chol_solve(p.chol_d, G)
    core = G.T @ cd_inv_g
    if mode is JacobianMode.FULL:
        if p.forward.second_deriv is None:
            raise ValueError(
                "FULL jacobian mode needs forward.second_deriv; provide an "
                "analytic closure or synthesize one with "
                "model.forward_model(...), which fills it in by central "
                "finite differences"
            )
        gx = p.forward.eval(x_star)
        weights = chol_solve(p.chol_d, gx - d_star)
        tensor = p.forward.second_deriv(x_star)  # (dim_d, dim_x, dim_x)
        core = core + np.tensordot(weights, tensor, axes=(0, 0))
    return JacobianBlocks(
        dxuc_dxstar=np.eye(p.dim_x) + p.prior_cov @ core / rho,
        dxuc_ddstar=-(p.prior_cov @ cd_inv_g.T) / rho,
        dduc_dxstar=-((1.0 - rho) / rho) * G,
        dduc_ddstar=np.eye(p.dim_d) / rho,
    )


def log_abs_det_jacobian(blocks: JacobianBlocks) -> float:
    """log |det J| of the assembled block matrix via pivoted factorization.

    The determinant's sign is discarded; an exactly singular matrix raises
    DegenerateProposalError because the candidate has no valid density.
    """
    sign, logabs = np.linalg.slogdet(blocks.assemble())
    if sign == 0.0:
        raise DegenerateProposalError("proposal Jacobian is exactly singular")
    return float(logabs)


def draw_unconditional(
    p: ProblemSpec, rng: np.random.Generator
) -> tuple[Array, Array]:
    """One unconditional draw: model from the prior, data around the observations.

    Order is fixed (model first) so that a given generator state always
    yields the same pair.
    """
    x_uc = p.sample_prior(rng)
    d_uc = p.sample_obs(rng)
    return x_uc, d_uc


def propose(
    p: ProblemSpec,
    h: HyperParams,
    s: OptSettings,
    rng: np.random.Generator,
    mode: JacobianMode = JacobianMode.FULL,
) -> CandidateState:
    """Generate one independent candidate with its densities attached.

    Draws (x_uc, d_uc), minimizes, and evaluates the target and proposal log
    densities at the resulting point.  Candidates whose optimization failed
    or whose Jacobian is singular come back flagged with jacobian_mode NONE
    and NaN densities; the chain must reject them.
    """
    x_uc, d_uc = draw_unconditional(p, rng)
    opt = minimize(p, h, s, x_uc, d_uc)
    if not opt.converged:
        return CandidateState(
            x_star=opt.x_star,
            d_star=opt.d_star,
            log_q=float("nan"),
            log_pi_joint=float("nan"),
            log_abs_det_j=float("nan"),
            jacobian_mode=JacobianMode.NONE,
            opt=opt,
        )
    log_pi = log_target_joint(p, h, opt.x_star, opt.d_star)
    if mode is JacobianMode.NONE:
        return CandidateState(
            x_star=opt.x_star,
            d_star=opt.d_star,
            log_q=float("nan"),
            log_pi_joint=log_pi,
            log_abs_det_j=float("nan"),
            jacobian_mode=JacobianMode.NONE,
            opt=opt,
        )
    try:
        blocks = jacobian_blocks(p, h, opt.x_star, opt.d_star, mode)
        log_det = log_abs_det_jacobian(blocks)
    except DegenerateProposalError:
        return CandidateState(
            x_star=opt.x_star,
            d_star=opt.d_star,
            log_q=float("nan"),
            log_pi_joint=log_pi,
            log_abs_det_j=float("nan"),
            jacobian_mode=JacobianMode.NONE,
            opt=opt,
        )
    x_uc_back, d_uc_back = inverse_transform(p, h, opt.x_star, opt.d_star)
    log_q = log_prior_joint(p, x_uc_back, d_uc_back) + log_det
    return CandidateState(
        x_star=opt.x_star,
        d_star=opt.d_star,
        log_q=float(log_q),
        log_pi_joint=float(log_pi),
        log_abs_det_j=float(log_det),
        jacobian_mode=mode,
        opt=opt,
    )


def linear_transition_matrix(p: ProblemSpec, h: HyperParams) -> Array:
    """Exact map (x_uc, d_uc) -> (x_star, d_star) for a linear forward model.

    Solves the linear stationarity system; the model rows do not depend on
    rho, the data rows blend d_uc with the mapped response.
    """
    G = p.forward.jacobian(p.prior_mean)
    n, m = p.dim_x, p.dim_d
    cd_inv_g = chol_solve(p.chol_d, G)
    M = np.eye(n) + p.prior_cov @ (G.T @ cd_inv_g)
    top = np.linalg.solve(M, np.hstack([np.eye(n), p.prior_cov @ cd_inv_g.T]))
    a11, a12 = top[:, :n], top[:, n:]
    a21 = (1.0 - h.rho) * G @ a11
    a22 = h.rho * np.eye(m) + (1.0 - h.rho) * G @ a12
    return np.block([[a11, a12], [a21, a22]])
