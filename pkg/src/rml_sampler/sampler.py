"""Independence Metropolis-Hastings chains driven by optimization proposals.

Two chain drivers live here: the augmented-state sampler on (x, d), which is
the main algorithm, and a 1-D legacy sampler whose marginal proposal density
is computed by quadrature.  The legacy path is slow by construction and
serves as a low-dimensional cross-check.

RNG layout: proposal k consumes the generator seeded by SeedSequence(seed,
spawn_key=(0, k)); the accept/reject uniforms come from SeedSequence(seed,
spawn_key=(1,)).  Proposals can therefore be precomputed concurrently
without changing results, since candidate k never depends on the chain
state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .densities import HyperParams, log_target_marginal
from .model import ProblemSpec
from .optimizer import OptSettings, minimize
from .proposal import CandidateState, JacobianMode, propose

Array = np.ndarray

logger = logging.getLogger(__name__)

# Give up initialization after this many consecutive failed proposals.
_MAX_INIT_ATTEMPTS = 100


@dataclass(frozen=True)
class ChainState:
    x: Array
    d: Array
    log_pi_joint: float
    log_q: float
    step_index: int


@dataclass
class ChainRecord:
    """Accepted-state trace plus acceptance bookkeeping for one chain.

    Row i of the state arrays is the chain state after step i; row 0 is the
    initial state.  accept_flags[i] tells whether proposal i+1 was accepted.
    n_optfail counts proposals that never entered the accept test because
    the optimizer failed or the proposal density was degenerate.
    """

    xs: Array
    ds: Array
    log_pi: Array
    log_q: Array
    accept_flags: Array
    n_proposed: int
    n_accepted: int
    n_optfail: int
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed

    def state(self, i: int) -> ChainState:
        return ChainState(
            x=self.xs[i],
            d=self.ds[i],
            log_pi_joint=float(self.log_pi[i]),
            log_q=float(self.log_q[i]),
            step_index=i,
        )

    def __len__(self) -> int:
        return self.xs.shape[0]


def proposal_stream(seed: int, k: int) -> np.random.Generator:
    """Generator feeding the k-th proposal of the chain seeded by `seed`."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, k)))


def acceptance_stream(seed: int) -> np.random.Generator:
    """Generator feeding the chain's accept/reject uniforms."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))


def mh_accept_prob(
    log_pi_new: float, log_q_new: float, log_pi_cur: float, log_q_cur: float
) -> float:
    """Independence-sampler acceptance probability, computed in log space."""
    if np.isneginf(log_pi_new):
        return 0.0
    if np.isneginf(log_pi_cur):
        return 1.0  # escape from an impossible current state
    log_ratio = (log_pi_new - log_pi_cur) + (log_q_cur - log_q_new)
    if log_ratio >= 0.0:
        return 1.0
    return float(np.exp(log_ratio))


def _candidate_usable(cand: CandidateState, mode: JacobianMode) -> bool:
    if not cand.opt.converged:
        return False
    if mode is JacobianMode.NONE:
        return True
    return cand.jacobian_mode is mode and np.isfinite(cand.log_q) and np.isfinite(
        cand.log_pi_joint
    )


def _first_converged(
    p: ProblemSpec,
    h: HyperParams,
    s: OptSettings,
    seed: int,
    mode: JacobianMode,
    start_k: int = 0,
) -> tuple[CandidateState, int]:
    """First usable candidate and the next unconsumed proposal-stream index."""
    k = start_k
    for _ in range(_MAX_INIT_ATTEMPTS):
        cand = propose(p, h, s, proposal_stream(seed, k), mode)
        k += 1
        if _candidate_usable(cand, mode):
            return cand, k
    raise RuntimeError(
        f"no converged proposal in {_MAX_INIT_ATTEMPTS} attempts; check the "
        "problem scaling or optimizer settings"
    )


def init_state(
    p: ProblemSpec,
    h: HyperParams,
    s: OptSettings,
    seed: int,
    mode: JacobianMode = JacobianMode.FULL,
) -> ChainState:
    """Initial chain state: the first converged candidate, adopted as-is."""
    cand, _ = _first_converged(p, h, s, seed, mode)
    return ChainState(
        x=cand.x_star,
        d=cand.d_star,
        log_pi_joint=cand.log_pi_joint,
        log_q=cand.log_q,
        step_index=0,
    )


def run_chain_augmented(
    p: ProblemSpec,
    h: HyperParams,
    s: OptSettings,
    n_steps: int,
    seed: int,
    mode: JacobianMode = JacobianMode.FULL,
) -> ChainRecord:
    """Run the augmented-state independence sampler for n_steps proposals.

    Each step draws an independent candidate; with mode FULL or GAUSS_NEWTON
    the usual accept test runs on the joint target, with mode NONE every
    converged candidate is accepted.  Unusable candidates (failed
    optimization, singular Jacobian) are automatic rejections.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    cand0, next_k = _first_converged(p, h, s, seed, mode)
    accept_rng = acceptance_stream(seed)

    xs = np.empty((n_steps + 1, p.dim_x))
    ds = np.empty((n_steps + 1, p.dim_d))
    log_pi = np.empty(n_steps + 1)
    log_q = np.empty(n_steps + 1)
    flags = np.zeros(n_steps, dtype=bool)

    xs[0], ds[0] = cand0.x_star, cand0.d_star
    log_pi[0], log_q[0] = cand0.log_pi_joint, cand0.log_q

    cur_log_pi, cur_log_q = cand0.log_pi_joint, cand0.log_q
    n_accepted = 0
    n_optfail = 0
    for i in range(1, n_steps + 1):
        cand = propose(p, h, s, proposal_stream(seed, next_k), mode)
        next_k += 1
        usable = _candidate_usable(cand, mode)
        if not usable:
            n_optfail += 1
            alpha = 0.0
        elif mode is JacobianMode.NONE:
            alpha = 1.0
        else:
            alpha = mh_accept_prob(cand.log_pi_joint, cand.log_q, cur_log_pi, cur_log_q)
        u = accept_rng.uniform()
        if u < alpha:
            xs[i], ds[i] = cand.x_star, cand.d_star
            cur_log_pi, cur_log_q = cand.log_pi_joint, cand.log_q
            flags[i - 1] = True
            n_accepted += 1
        else:
            xs[i], ds[i] = xs[i - 1], ds[i - 1]
        log_pi[i], log_q[i] = cur_log_pi, cur_log_q

    return ChainRecord(
        xs=xs,
        ds=ds,
        log_pi=log_pi,
        log_q=log_q,
        accept_flags=flags,
        n_proposed=n_steps,
        n_accepted=n_accepted,
        n_optfail=n_optfail,
        seed=seed,
        config={
            "algorithm": "augmented",
            "rho": h.rho,
            "gamma": h.gamma,
            "jacobian": mode.value,
            "n_steps": n_steps,
            "seed": seed,
            "optimizer": {
                "max_iters": s.max_iters,
                "grad_tol": s.grad_tol,
                "step_tol": s.step_tol,
                "lm_lambda0": s.lm_lambda0,
                "lm_shrink": s.lm_shrink,
                "lm_grow": s.lm_grow,
            },
        },
    )


@dataclass(frozen=True)
class QuadSettings:
    """Quadrature grid for the legacy marginal proposal density.

    The data-draw axis is covered by n_nodes trapezoid points spanning
    half_width_sigmas observation standard deviations either side of the
    recorded observation.  The integrand is zeroed wherever the 1-D Jacobian
    factor is nonpositive and, when n_scan > 0, wherever the candidate is not
    reachable by monotone descent from the inverse-mapped draw; a minimizer
    only ever returns the first stationary point downhill of its start, so
    without that restriction the quadrature counts minima the optimizer
    would never select and the acceptance test is fed the wrong density.
    """

    half_width_sigmas: float = 8.0
    n_nodes: int = 4097
    n_scan: int = 65

    def __post_init__(self) -> None:
        if self.half_width_sigmas <= 0.0 or self.n_nodes < 3:
            raise ValueError("need positive half width and at least 3 nodes")
        if self.n_scan < 0:
            raise ValueError("n_scan must be >= 0 (0 disables the descent scan)")


def _legacy_log_qm(p: ProblemSpec, x_star: Array, quad: QuadSettings) -> float:
    """log of the marginal proposal density q_m(x_star) by trapezoid quadrature.

    Integrates the prior-weighted inverse-map density over the data draw,
    restricted per QuadSettings.  Returns -inf when the admissible region has
    measure zero on the grid.
    """
    sx = float(p.prior_cov[0, 0])
    sd = float(p.obs_cov[0, 0])
    mu = float(p.prior_mean[0])
    dobs = float(p.obs[0])
    xs = float(x_star[0])
    gx = float(p.forward.eval(x_star)[0])
    G = float(p.forward.jacobian(x_star)[0, 0])
    Gp = float(p.forward.second_deriv(x_star)[0, 0, 0])

    half = quad.half_width_sigmas * np.sqrt(sd)
    d_nodes = np.linspace(dobs - half, dobs + half, quad.n_nodes)
    x_uc = xs + sx * G * (gx - d_nodes) / sd
    jac = 1.0 + sx * (G * G + Gp * (gx - d_nodes)) / sd
    integrand = (
        np.exp(-0.5 * (x_uc - mu) ** 2 / sx)
        / np.sqrt(2.0 * np.pi * sx)
        * np.exp(-0.5 * (d_nodes - dobs) ** 2 / sd)
        / np.sqrt(2.0 * np.pi * sd)
        * jac
    )
    integrand[jac <= 0.0] = 0.0
    if quad.n_scan > 0:
        # The descent scan is the expensive part; skip nodes whose weight is
        # already negligible relative to the peak.
        active = integrand > 1e-18 * integrand.max(initial=0.0)
        if np.any(active):
            reachable = _descent_reachable(
                p, xs, x_uc[active], d_nodes[active], quad.n_scan
            )
            keep = np.zeros_like(active)
            keep[active] = reachable
            integrand[~keep] = 0.0
    qm = float(np.trapezoid(integrand, d_nodes))
    if qm <= 0.0:
        return float("-inf")
    return float(np.log(qm))


def _descent_reachable(
    p: ProblemSpec, x_star: float, x_uc: Array, d_nodes: Array, n_scan: int
) -> Array:
    """Which draws flow downhill to x_star (1-D, per quadrature node).

    Scans the minimization objective along the segment from each start x_uc
    to the candidate; reachability by descent means the objective never
    increases along the way (no intervening stationary point).
    """
    sx = float(p.prior_cov[0, 0])
    sd = float(p.obs_cov[0, 0])
    t = np.linspace(0.0, 1.0, n_scan)[None, :]
    pts = x_uc[:, None] * (1.0 - t) + x_star * t
    if p.forward.eval_batch is not None:
        gvals = p.forward.eval_batch(pts[..., None])[..., 0]
    else:
        gvals = np.array([[float(p.forward.eval(np.array([v]))[0]) for v in row] for row in pts])
    fvals = 0.5 * (pts - x_uc[:, None]) ** 2 / sx + 0.5 * (gvals - d_nodes[:, None]) ** 2 / sd
    slack = 1e-12 * (1.0 + np.abs(fvals).max(axis=1, keepdims=True))
    return ~np.any(np.diff(fvals, axis=1) > slack, axis=1)


def run_chain_legacy_1d(
    p: ProblemSpec,
    s: OptSettings,
    n_steps: int,
    seed: int,
    quad: Optional[QuadSettings] = None,
) -> ChainRecord:
    """Model-variable-only independence sampler with a quadrature proposal density.

    Only 1-D problems are supported; the per-candidate quadrature makes this
    an oracle for validating the augmented sampler, not a production path.
    The recorded d column holds the data draw attached to each accepted
    candidate.
    """
    if p.dim_x != 1 or p.dim_d != 1:
        raise ValueError("legacy sampler supports dim_x = dim_d = 1 only")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    quad = quad or QuadSettings()
    # rho never affects the minimizer's model component; any interior value works.
    h = HyperParams(gamma=0.5, rho=0.5)

    def candidate(k: int):
        rng = proposal_stream(seed, k)
        x_uc = p.sample_prior(rng)
        d_uc = p.sample_obs(rng)
        opt = minimize(p, h, s, x_uc, d_uc)
        if not opt.converged:
            return None, d_uc
        log_qm = _legacy_log_qm(p, opt.x_star, quad)
        if not np.isfinite(log_qm):
            logger.warning(
                "legacy proposal at x=%s has zero positive-Jacobian mass; rejected",
                opt.x_star,
            )
            return None, d_uc
        return (opt.x_star, log_qm, log_target_marginal(p, opt.x_star)), d_uc

    k = 0
    init = None
    for _ in range(_MAX_INIT_ATTEMPTS):
        init, d_init = candidate(k)
        k += 1
        if init is not None:
            break
    if init is None:
        raise RuntimeError(f"no usable legacy proposal in {_MAX_INIT_ATTEMPTS} attempts")

    accept_rng = acceptance_stream(seed)
    xs = np.empty((n_steps + 1, 1))
    ds = np.empty((n_steps + 1, 1))
    log_pi = np.empty(n_steps + 1)
    log_q = np.empty(n_steps + 1)
    flags = np.zeros(n_steps, dtype=bool)

    xs[0], ds[0] = init[0], d_init
    log_q[0], log_pi[0] = init[1], init[2]
    cur_log_q, cur_log_pi = init[1], init[2]
    n_accepted = 0
    n_optfail = 0
    for i in range(1, n_steps + 1):
        cand, d_uc = candidate(k)
        k += 1
        if cand is None:
            n_optfail += 1
            alpha = 0.0
        else:
            x_star, log_qm, log_pi_new = cand
            alpha = mh_accept_prob(log_pi_new, log_qm, cur_log_pi, cur_log_q)
        u = accept_rng.uniform()
        if cand is not None and u < alpha:
            xs[i], ds[i] = cand[0], d_uc
            cur_log_q, cur_log_pi = cand[1], cand[2]
            flags[i - 1] = True
            n_accepted += 1
        else:
            xs[i], ds[i] = xs[i - 1], ds[i - 1]
        log_pi[i], log_q[i] = cur_log_pi, cur_log_q

    return ChainRecord(
        xs=xs,
        ds=ds,
        log_pi=log_pi,
        log_q=log_q,
        accept_flags=flags,
        n_proposed=n_steps,
        n_accepted=n_accepted,
        n_optfail=n_optfail,
        seed=seed,
        config={
            "algorithm": "legacy-1d",
            "n_steps": n_steps,
            "seed": seed,
            "quad": {"half_width_sigmas": quad.half_width_sigmas, "n_nodes": quad.n_nodes},
            "optimizer": {
                "max_iters": s.max_iters,
                "grad_tol": s.grad_tol,
                "step_tol": s.step_tol,
                "lm_lambda0": s.lm_lambda0,
                "lm_shrink": s.lm_shrink,
                "lm_grow": s.lm_grow,
            },
        },
    )
