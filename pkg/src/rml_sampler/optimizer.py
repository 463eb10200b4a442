"""Nonlinear least-squares machinery mapping unconditional draws to candidates.

The joint objective over (x, d) is quadratic in d, so d is eliminated
exactly and a Levenberg-Marquardt iteration runs on the reduced problem in
x.  The reduced objective does not depend on rho; rho only enters when the
eliminated d is reconstructed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .densities import HyperParams, _check_shape
from .linalg import chol_quad, chol_solve
from .model import ProblemSpec

Array = np.ndarray

# Damping bounds for the Levenberg-Marquardt loop.
_LM_LAMBDA_MAX = 1e14
_LM_LAMBDA_MIN = 1e-15


@dataclass(frozen=True)
class OptSettings:
    """Levenberg-Marquardt settings.

    Convergence requires the stationarity measure (sup norm of the reduced
    gradient and of its prior-covariance-scaled form) to fall below grad_tol.
    """

    max_iters: int = 200
    grad_tol: float = 1e-8
    step_tol: float = 1e-12
    lm_lambda0: float = 1e-3
    lm_shrink: float = 0.33
    lm_grow: float = 3.0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if min(self.grad_tol, self.step_tol, self.lm_lambda0) <= 0.0:
            raise ValueError("tolerances and lm_lambda0 must be positive")
        if not self.lm_shrink < 1.0 < self.lm_grow:
            raise ValueError("need lm_shrink < 1 < lm_grow")


@dataclass(frozen=True)
class OptResult:
    x_star: Array
    d_star: Array
    converged: bool
    iters: int
    final_grad_norm: float
    objective_value: float


def augmented_objective(
    p: ProblemSpec, h: HyperParams, x: Array, d: Array, x_uc: Array, d_uc: Array
) -> float:
    """Stochastic least-squares objective tying (x, d) to one unconditional draw."""
    x = _check_shape(x, p.dim_x, "x")
    d = _check_shape(d, p.dim_d, "d")
    gx = p.forward.eval(x)
    prior_term = chol_quad(p.chol_x, x - x_uc)
    model_term = chol_quad(p.chol_d, gx - d) / h.rho
    data_term = chol_quad(p.chol_d, d - d_uc) / (1.0 - h.rho)
    return 0.5 * (prior_term + model_term + data_term)


def eliminate_d(p: ProblemSpec, h: HyperParams, x: Array, d_uc: Array) -> Array:
    """Exact inner minimizer over d for fixed x: a rho-weighted convex blend."""
    x = _check_shape(x, p.dim_x, "x")
    return h.rho * np.asarray(d_uc, float) + (1.0 - h.rho) * p.forward.eval(x)


def stationarity_residuals(
    p: ProblemSpec, h: HyperParams, x_star: Array, d_star: Array, x_uc: Array, d_uc: Array
) -> tuple[Array, Array]:
    """First-order conditions of the augmented objective at (x_star, d_star).

    Both residual vectors vanish at an interior minimum.  Used by tests and
    by the validation suite; the optimizer itself converges on an equivalent
    reduced-gradient measure.
    """
    gx = p.forward.eval(x_star)
    G = p.forward.jacobian(x_star)
    res_x = x_star - x_uc + p.prior_cov @ (G.T @ chol_solve(p.chol_d, gx - d_star)) / h.rho
    res_d = d_star - h.rho * np.asarray(d_uc, float) - (1.0 - h.rho) * gx
    return res_x, res_d


def _reduced_pieces(p: ProblemSpec, x: Array, x_uc: Array, d_uc: Array):
    """Residual vector and forward value of the rho-free reduced objective."""
    gx = p.forward.eval(x)
    rx = solve_triangular(p.chol_x, x - x_uc, lower=True)
    rd = solve_triangular(p.chol_d, gx - d_uc, lower=True)
    return np.concatenate([rx, rd]), gx


_POLISH_MAX_ITERS = 50


def _newton_polish(p: ProblemSpec, s: OptSettings, x, x_uc, d_uc, grad_measure):
    """Damped exact-Newton refinement of the reduced objective.

    Runs only when the main loop stalls; uses the forward model's second
    derivatives for the true Hessian and accepts steps that reduce the
    gradient measure.
    """
    def gradient(x, gx):
        return chol_solve(p.chol_x, x - x_uc) + p.forward.jacobian(x).T @ chol_solve(
            p.chol_d, gx - d_uc
        )

    gx = p.forward.eval(x)
    grad = gradient(x, gx)
    gnorm = grad_measure(grad)
    lam = s.lm_lambda0
    n_extra = 0
    while gnorm > s.grad_tol and n_extra < _POLISH_MAX_ITERS:
        G = p.forward.jacobian(x)
        hess = (
            chol_solve(p.chol_x, np.eye(p.dim_x))
            + G.T @ chol_solve(p.chol_d, G)
            + np.tensordot(
                chol_solve(p.chol_d, gx - d_uc), p.forward.second_deriv(x), axes=(0, 0)
            )
        )
        improved = False
        while lam <= _LM_LAMBDA_MAX:
            try:
                delta = np.linalg.solve(hess + lam * np.eye(p.dim_x), -grad)
            except np.linalg.LinAlgError:
                lam *= s.lm_grow
                continue
            x_try = x + delta
            gx_try = p.forward.eval(x_try)
            grad_try = gradient(x_try, gx_try)
            if grad_measure(grad_try) < gnorm:
                x, gx, grad = x_try, gx_try, grad_try
                gnorm = grad_measure(grad)
                lam = max(lam * s.lm_shrink, _LM_LAMBDA_MIN)
                improved = True
                break
            lam *= s.lm_grow
        n_extra += 1
        if not improved:
            break
    return x, gx, gnorm, n_extra


def minimize(
    p: ProblemSpec,
    h: HyperParams,
    s: OptSettings,
    x_uc: Array,
    d_uc: Array,
    x0: Optional[Array] = None,
) -> OptResult:
    """Map an unconditional draw to a stationary point of the augmented objective.

    Runs Levenberg-Marquardt on the d-eliminated objective starting from
    x0 (the draw x_uc itself by default), then reconstructs d.
    Nonconvergence within max_iters is reported in the result, not raised;
    the caller decides the disposition.
    """
    x_uc = _check_shape(x_uc, p.dim_x, "x_uc")
    d_uc = _check_shape(d_uc, p.dim_d, "d_uc")
    eye_x = np.eye(p.dim_x)
    inv_lx = solve_triangular(p.chol_x, eye_x, lower=True)

    def grad_measure(grad: Array) -> float:
        # Covers both the plain gradient and the covariance-scaled
        # stationarity residual x - x_uc + C_x G^T C_d^{-1} (g - d_uc).
        return max(np.max(np.abs(grad)), np.max(np.abs(p.prior_cov @ grad)))

    def jac_at(x: Array) -> Array:
        return np.vstack(
            [inv_lx, solve_triangular(p.chol_d, p.forward.jacobian(x), lower=True)]
        )

    x = x_uc.copy() if x0 is None else _check_shape(x0, p.dim_x, "x0").copy()
    r, gx = _reduced_pieces(p, x, x_uc, d_uc)
    fval = 0.5 * float(r @ r)
    lam = s.lm_lambda0
    n_iter = 0
    converged = False

    while True:
        jac = jac_at(x)
        grad = jac.T @ r
        gnorm = grad_measure(grad)
        if gnorm <= s.grad_tol:
            converged = True
            break
        if n_iter >= s.max_iters:
            break

        hess = jac.T @ jac
        # Near the optimum the true objective decrease drops below float
        # resolution; a step that ties within this slack still counts as
        # progress when it strictly reduces the gradient measure.
        tie_slack = 1e-13 * (1.0 + abs(fval))
        step = None
        while lam <= _LM_LAMBDA_MAX:
            try:
                delta = np.linalg.solve(hess + lam * eye_x, -grad)
            except np.linalg.LinAlgError:
                lam *= s.lm_grow
                continue
            r_try, gx_try = _reduced_pieces(p, x + delta, x_uc, d_uc)
            f_try = 0.5 * float(r_try @ r_try)
            accept = f_try < fval
            if not accept and f_try <= fval + tie_slack:
                accept = grad_measure(jac_at(x + delta).T @ r_try) < gnorm
            if accept:
                step = delta
                x = x + delta
                r, gx, fval = r_try, gx_try, f_try
                lam = max(lam * s.lm_shrink, _LM_LAMBDA_MIN)
                break
            lam *= s.lm_grow
        n_iter += 1
        if step is None:
            break  # damping exhausted without any progress
        if np.linalg.norm(step) <= s.step_tol * (s.step_tol + np.linalg.norm(x)):
            gnorm = grad_measure(jac_at(x).T @ r)
            converged = gnorm <= s.grad_tol
            break

    if not converged and p.forward.second_deriv is not None:
        # The Gauss-Newton model crawls where the residual-weighted curvature
        # dominates (e.g. near a vanishing Jacobian); polish with damped exact
        # Newton steps, accepting on gradient decrease.
        x, gx, gnorm, extra = _newton_polish(p, s, x, x_uc, d_uc, grad_measure)
        n_iter += extra
        converged = gnorm <= s.grad_tol

    d_star = h.rho * d_uc + (1.0 - h.rho) * gx
    objective = (
        0.5 * chol_quad(p.chol_x, x - x_uc)
        + 0.5 * chol_quad(p.chol_d, gx - d_star) / h.rho
        + 0.5 * chol_quad(p.chol_d, d_star - d_uc) / (1.0 - h.rho)
    )
    return OptResult(
        x_star=x,
        d_star=d_star,
        converged=converged,
        iters=n_iter,
        final_grad_norm=float(gnorm),
        objective_value=float(objective),
    )
