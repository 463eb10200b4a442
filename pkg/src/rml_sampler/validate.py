"""Self-contained property checks runnable from the command line.

Each check returns a CheckResult; the CLI prints them as a table and exits
nonzero if any failed.  The functions take the problem as an argument so the
test suite can also run them against deliberately corrupted models as
negative controls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .densities import HyperParams, log_target_joint, log_target_marginal
from .model import (
    ProblemSpec,
    fd_jacobian,
    fd_second_deriv,
    make_example1,
    make_example2,
    make_example3_transformed,
    make_linear_problem,
)
from .optimizer import OptSettings, minimize
from .oracle import conjugate_posterior, grid_marginal
from .proposal import (
    JacobianMode,
    inverse_transform,
    jacobian_blocks,
    linear_transition_matrix,
)

Array = np.ndarray


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _sample_points(p: ProblemSpec, rng: np.random.Generator, n: int) -> Array:
    return p.sample_prior(rng, n)


def check_jacobian_fd(
    p: ProblemSpec, name: str, n_points: int = 100, tol: float = 1e-5, seed: int = 2024
) -> CheckResult:
    """Analytic Jacobian against central differences of the forward map."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x in _sample_points(p, rng, n_points):
        ana = p.forward.jacobian(x)
        ref = fd_jacobian(p.forward.eval, x)
        err = np.max(np.abs(ana - ref)) / max(1.0, np.max(np.abs(ana)))
        worst = max(worst, err)
    return CheckResult(
        name=f"jacobian-fd:{name}",
        passed=worst <= tol,
        detail=f"max rel err {worst:.3e} (tol {tol:g})",
    )


def check_second_deriv_fd(
    p: ProblemSpec, name: str, n_points: int = 100, tol: float = 1e-4, seed: int = 2025
) -> CheckResult:
    """Analytic second derivatives against central differences of the Jacobian."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x in _sample_points(p, rng, n_points):
        ana = p.forward.second_deriv(x)
        ref = fd_second_deriv(p.forward.jacobian, x)
        err = np.max(np.abs(ana - ref)) / max(1.0, np.max(np.abs(ana)))
        worst = max(worst, err)
    return CheckResult(
        name=f"second-deriv-fd:{name}",
        passed=worst <= tol,
        detail=f"max rel err {worst:.3e} (tol {tol:g})",
    )


def check_round_trip(
    p: ProblemSpec,
    name: str,
    rho: float = 0.65,
    n_draws: int = 1000,
    tol: float = 1e-6,
    seed: int = 2026,
) -> CheckResult:
    """minimize followed by inverse_transform returns the generating draw."""
    h = HyperParams(gamma=0.01, rho=rho)
    s = OptSettings()
    rng = np.random.default_rng(seed)
    worst = 0.0
    n_fail = 0
    for _ in range(n_draws):
        x_uc, d_uc = p.sample_prior(rng), p.sample_obs(rng)
        res = minimize(p, h, s, x_uc, d_uc)
        if not res.converged:
            n_fail += 1
            continue
        xb, db = inverse_transform(p, h, res.x_star, res.d_star)
        worst = max(worst, float(np.max(np.abs(xb - x_uc))), float(np.max(np.abs(db - d_uc))))
    return CheckResult(
        name=f"round-trip:{name}",
        passed=worst <= tol and n_fail == 0,
        detail=f"sup err {worst:.3e} (tol {tol:g}), {n_fail} non-converged",
    )


def check_jacobian_blocks_fd(
    p: ProblemSpec,
    name: str,
    rho: float = 0.5,
    n_points: int = 100,
    tol: float = 1e-5,
    seed: int = 2027,
) -> CheckResult:
    """Assembled analytic Jacobian against differences of inverse_transform."""
    h = HyperParams(gamma=0.01, rho=rho)
    rng = np.random.default_rng(seed)

    def inv_flat(z: Array) -> Array:
        x_uc, d_uc = inverse_transform(p, h, z[: p.dim_x], z[p.dim_x :])
        return np.concatenate([x_uc, d_uc])

    worst = 0.0
    for x in _sample_points(p, rng, n_points):
        d = p.forward.eval(x) + p.sample_obs(rng) - p.obs
        z = np.concatenate([x, d])
        ana = jacobian_blocks(p, h, x, d, JacobianMode.FULL).assemble()
        ref = fd_jacobian(inv_flat, z)
        err = np.max(np.abs(ana - ref)) / max(1.0, np.max(np.abs(ana)))
        worst = max(worst, err)
    return CheckResult(
        name=f"jacobian-blocks-fd:{name}",
        passed=worst <= tol,
        detail=f"max rel err {worst:.3e} (tol {tol:g})",
    )


def check_gauss_linear_exactness(tol_x: float = 1e-10, tol_a: float = 1e-8) -> CheckResult:
    """minimize solves the linear stationarity system; the map matches it."""
    rng = np.random.default_rng(11)
    G = np.array([[1.2, -0.4, 0.3], [0.1, 0.8, -0.5]])
    cx = np.diag([0.5, 1.0, 2.0])
    cd = np.array([[0.3, 0.05], [0.05, 0.2]])
    p = make_linear_problem(
        prior_mean=[0.4, -0.2, 1.0], prior_cov=cx, gain=G, obs=[0.9, -0.1], obs_cov=cd
    )
    h = HyperParams(gamma=0.2, rho=0.45)
    s = OptSettings(grad_tol=1e-13)
    A = linear_transition_matrix(p, h)

    worst_x = 0.0
    worst_a = 0.0
    for _ in range(25):
        x_uc, d_uc = p.sample_prior(rng), p.sample_obs(rng)
        res = minimize(p, h, s, x_uc, d_uc)
        # direct solve of the stationarity system
        M = np.eye(3) + cx @ G.T @ np.linalg.solve(cd, G)
        x_exact = np.linalg.solve(M, x_uc + cx @ G.T @ np.linalg.solve(cd, d_uc))
        worst_x = max(worst_x, float(np.max(np.abs(res.x_star - x_exact))))
        mapped = A @ np.concatenate([x_uc, d_uc])
        worst_a = max(
            worst_a,
            float(np.max(np.abs(mapped - np.concatenate([res.x_star, res.d_star])))),
        )
    return CheckResult(
        name="gauss-linear-exactness",
        passed=worst_x <= tol_x and worst_a <= tol_a,
        detail=f"solver err {worst_x:.3e} (tol {tol_x:g}), map err {worst_a:.3e} (tol {tol_a:g})",
    )


def check_rho_invariance(
    p: ProblemSpec, name: str, n_draws: int = 50, seed: int = 2028
) -> CheckResult:
    """The model component of the minimizer does not depend on rho."""
    s = OptSettings()
    tol = 10.0 * s.grad_tol
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        x_uc, d_uc = p.sample_prior(rng), p.sample_obs(rng)
        sols = []
        for rho in (0.1, 0.5, 0.9):
            res = minimize(p, HyperParams(gamma=0.01, rho=rho), s, x_uc, d_uc)
            if res.converged:
                sols.append(res.x_star)
        for a in sols[1:]:
            worst = max(worst, float(np.max(np.abs(a - sols[0]))))
    return CheckResult(
        name=f"rho-invariance:{name}",
        passed=worst <= tol,
        detail=f"sup spread {worst:.3e} (tol {tol:g})",
    )


def check_quadrature_convergence(
    p: ProblemSpec, name: str, n_coarse: int = 512, tol: float = 1e-6
) -> CheckResult:
    """Doubling the grid resolution leaves the normalizer unchanged."""
    g1 = grid_marginal(p, n=n_coarse)
    g2 = grid_marginal(p, n=2 * n_coarse)
    delta = abs(g1.normalizer - g2.normalizer)
    return CheckResult(
        name=f"quadrature-convergence:{name}",
        passed=delta <= tol,
        detail=f"normalizer shift {delta:.3e} (tol {tol:g})",
    )


def check_gamma_independence(tol: float = 1e-6) -> CheckResult:
    """Marginalizing the joint target over d recovers the x-marginal for any gamma."""
    p = make_example1()
    xs = np.linspace(1.2, 2.8, 33)
    worst = 0.0
    sd = float(p.obs_cov[0, 0])
    for gamma in (0.01, 0.4, 0.9):
        h = HyperParams(gamma=gamma, rho=0.5)
        resid = []
        for xv in xs:
            x = np.array([xv])
            gx = float(p.forward.eval(x)[0])
            center = (1.0 - gamma) * gx + gamma * float(p.obs[0])
            width = np.sqrt(gamma * (1.0 - gamma) * sd)
            dg = np.linspace(center - 10.0 * width, center + 10.0 * width, 2001)
            lv = np.array([log_target_joint(p, h, x, np.array([d])) for d in dg])
            peak = lv.max()
            marg = peak + np.log(np.trapezoid(np.exp(lv - peak), dg))
            resid.append(marg - log_target_marginal(p, x))
        resid = np.asarray(resid)
        worst = max(worst, float(np.max(np.abs(resid - resid.mean()))))
    return CheckResult(
        name="gamma-independence",
        passed=worst <= tol,
        detail=f"max aligned deviation {worst:.3e} (tol {tol:g})",
    )


def check_conjugate_vs_grid(tol: float = 1e-6) -> CheckResult:
    """Closed-form linear posterior agrees with grid quadrature moments."""
    p = make_linear_problem(
        prior_mean=[0.3], prior_cov=[[0.8]], gain=[[1.4]], obs=[1.1], obs_cov=[[0.5]]
    )
    mean, cov = conjugate_posterior([0.3], [[0.8]], [[1.4]], [1.1], [[0.5]])
    grid = grid_marginal(p, n=4096)
    gm, gc = grid.mean_cov()
    err = max(abs(float(gm[0]) - float(mean[0])), abs(float(gc[0, 0]) - float(cov[0, 0])))
    return CheckResult(
        name="conjugate-vs-grid",
        passed=err <= tol,
        detail=f"moment err {err:.3e} (tol {tol:g})",
    )


def check_anamorphosis_round_trip(tol: float = 1e-8) -> CheckResult:
    """Latent-normal round trip across the working range."""
    _, anam = make_example3_transformed()
    z0 = np.linspace(-5.0, 5.0, 201)
    err = float(np.max(np.abs(anam.to_gauss(anam.from_gauss(z0)) - z0)))
    return CheckResult(
        name="anamorphosis-round-trip",
        passed=err <= tol,
        detail=f"max |round trip - id| {err:.3e} (tol {tol:g})",
    )


def standard_checks() -> list[CheckResult]:
    """The fast property suite used by the validate subcommand."""
    problems = {
        "example1": make_example1(),
        "example2": make_example2(),
        "example3": make_example3_transformed()[0],
    }
    out: list[CheckResult] = []
    for name, p in problems.items():
        out.append(check_jacobian_fd(p, name))
        out.append(check_second_deriv_fd(p, name))
        out.append(check_round_trip(p, name, n_draws=300))
        out.append(check_jacobian_blocks_fd(p, name, n_points=50))
        out.append(check_rho_invariance(p, name, n_draws=25))
    out.append(check_gauss_linear_exactness())
    out.append(check_quadrature_convergence(problems["example1"], "example1"))
    out.append(check_quadrature_convergence(problems["example2"], "example2", n_coarse=300))
    out.append(check_quadrature_convergence(problems["example3"], "example3"))
    out.append(check_gamma_independence())
    out.append(check_conjugate_vs_grid())
    out.append(check_anamorphosis_round_trip())
    return out


def chain_checks(n_steps: int = 20000) -> list[CheckResult]:
    """Slow end-to-end checks: acceptance windows and the rho sweep."""
    from .sampler import run_chain_augmented

    out: list[CheckResult] = []
    p1 = make_example1()
    s = OptSettings()
    rec = run_chain_augmented(p1, HyperParams(0.01, 0.65), s, n_steps, seed=1)
    out.append(
        CheckResult(
            name="example1-acceptance",
            passed=0.60 <= rec.acceptance_rate <= 0.66,
            detail=f"rate {rec.acceptance_rate:.4f} (window [0.60, 0.66])",
        )
    )
    p2 = make_example2()
    rates = {}
    for rho in (0.35, 0.60):
        rec2 = run_chain_augmented(p2, HyperParams(0.01, rho), s, n_steps, seed=2)
        rates[rho] = rec2.acceptance_rate
    spread = abs(rates[0.35] - rates[0.60])
    out.append(
        CheckResult(
            name="example2-rho-sweep",
            passed=spread < 0.01,
            detail=f"rates {rates[0.35]:.4f} / {rates[0.60]:.4f}, spread {spread:.4f} (< 0.01)",
        )
    )
    return out
