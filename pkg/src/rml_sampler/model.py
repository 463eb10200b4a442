"""Inverse-problem definitions.

A problem couples a Gaussian prior over model variables, a forward operator
with first and second derivatives, and noisy observations.  The module also
ships the benchmark problems used throughout the test suite and a scalar
Gaussian-anamorphosis wrapper for non-Gaussian priors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .linalg import spd_cholesky

Array = np.ndarray

# Central-difference step per component: FD_STEP_SCALE * (1 + |x_j|).
FD_STEP_SCALE = 1e-5

# Probabilities are clamped to [CDF_CLAMP, 1 - CDF_CLAMP] before inverse CDFs.
CDF_CLAMP = 1e-15

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ForwardModel:
    """Forward operator g with its derivative closures.

    eval maps a model vector to a data vector.  jacobian returns the
    (dim_d, dim_x) matrix of first derivatives.  second_deriv returns the
    (dim_d, dim_x, dim_x) tensor of second derivatives of each data
    component; it may be None when no analytic form is supplied and no
    finite-difference synthesis was requested.  eval_batch, when present,
    evaluates g over an array of points with shape (..., dim_x) in one call
    and is used by grid oracles only.
    """

    eval: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]
    second_deriv: Optional[Callable[[Array], Array]] = None
    eval_batch: Optional[Callable[[Array], Array]] = None


def fd_jacobian(func: Callable[[Array], Array], x: Array) -> Array:
    """Central-difference Jacobian of a vector-valued function."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        h = FD_STEP_SCALE * (1.0 + abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((np.asarray(func(xp), float) - np.asarray(func(xm), float)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def fd_second_deriv(jacobian: Callable[[Array], Array], x: Array) -> Array:
    """Central-difference derivative of a Jacobian closure.

    Returns the tensor T[i, a, b] = d G[i, a] / d x_b.
    """
    x = np.asarray(x, dtype=float)
    slabs = []
    for b in range(x.size):
        h = FD_STEP_SCALE * (1.0 + abs(x[b]))
        xp, xm = x.copy(), x.copy()
        xp[b] += h
        xm[b] -= h
        slabs.append((np.asarray(jacobian(xp), float) - np.asarray(jacobian(xm), float)) / (2.0 * h))
    return np.stack(slabs, axis=-1)


def forward_model(
    eval: Callable[[Array], Array],
    jacobian: Optional[Callable[[Array], Array]] = None,
    second_deriv: Optional[Callable[[Array], Array]] = None,
    eval_batch: Optional[Callable[[Array], Array]] = None,
) -> ForwardModel:
    """Build a ForwardModel, synthesizing missing derivatives by central differences.

    Analytic closures are used when given.  A missing Jacobian is differenced
    from eval; a missing second derivative is differenced from the (possibly
    already synthesized) Jacobian.
    """
    jac = jacobian if jacobian is not None else (lambda x: fd_jacobian(eval, x))
    sd = second_deriv if second_deriv is not None else (lambda x: fd_second_deriv(jac, x))
    return ForwardModel(eval=eval, jacobian=jac, second_deriv=sd, eval_batch=eval_batch)


@dataclass(frozen=True)
class ProblemSpec:
    """One Bayesian inverse problem: Gaussian prior, observations, forward map.

    prior_cov and obs_cov must be symmetric positive definite; their lower
    Cholesky factors are cached at construction and reused by every density
    evaluation.  Instances are immutable and safe to share across workers.
    """

    prior_mean: Array
    prior_cov: Array
    obs: Array
    obs_cov: Array
    forward: ForwardModel
    dim_x: int = field(init=False)
    dim_d: int = field(init=False)
    chol_x: Array = field(init=False, repr=False)
    chol_d: Array = field(init=False, repr=False)

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.prior_mean, dtype=float))
        obs = np.atleast_1d(np.asarray(self.obs, dtype=float))
        cx = np.atleast_2d(np.asarray(self.prior_cov, dtype=float))
        cd = np.atleast_2d(np.asarray(self.obs_cov, dtype=float))
        if mean.ndim != 1 or obs.ndim != 1:
            raise ValueError("prior_mean and obs must be vectors")
        if cx.shape != (mean.size, mean.size):
            raise ValueError(f"prior_cov shape {cx.shape} does not match dim_x={mean.size}")
        if cd.shape != (obs.size, obs.size):
            raise ValueError(f"obs_cov shape {cd.shape} does not match dim_d={obs.size}")
        object.__setattr__(self, "prior_mean", mean)
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "prior_cov", cx)
        object.__setattr__(self, "obs_cov", cd)
        object.__setattr__(self, "dim_x", mean.size)
        object.__setattr__(self, "dim_d", obs.size)
        object.__setattr__(self, "chol_x", spd_cholesky(cx, "prior_cov"))
        object.__setattr__(self, "chol_d", spd_cholesky(cd, "obs_cov"))

    def sample_prior(self, rng: np.random.Generator, size: Optional[int] = None) -> Array:
        """Draw model vectors from the prior N(prior_mean, prior_cov)."""
        n = 1 if size is None else size
        z = rng.standard_normal((n, self.dim_x))
        draws = self.prior_mean + z @ self.chol_x.T
        return draws[0] if size is None else draws

    def sample_obs(self, rng: np.random.Generator, size: Optional[int] = None) -> Array:
        """Draw data vectors from N(obs, obs_cov)."""
        n = 1 if size is None else size
        z = rng.standard_normal((n, self.dim_d))
        draws = self.obs + z @ self.chol_d.T
        return draws[0] if size is None else draws


@dataclass(frozen=True)
class Anamorphosis:
    """Monotone map between a scalar non-Gaussian variable and a standard normal.

    forward_cdf / inverse_cdf describe the original variable; gauss_cdf /
    gauss_inv_cdf the latent normal.  Probabilities are clamped away from 0
    and 1 before either inverse is applied.
    """

    forward_cdf: Callable[[Array], Array]
    inverse_cdf: Callable[[Array], Array]
    gauss_cdf: Callable[[Array], Array]
    gauss_inv_cdf: Callable[[Array], Array]

    @staticmethod
    def _clamp(p: Array) -> Array:
        return np.clip(p, CDF_CLAMP, 1.0 - CDF_CLAMP)

    def to_gauss(self, x: Array) -> Array:
        """Latent normal value z with matching quantile: z = Finv_z(F_x(x))."""
        return self.gauss_inv_cdf(self._clamp(self.forward_cdf(x)))

    def from_gauss(self, z: Array) -> Array:
        """Original-space value x with matching quantile: x = Finv_x(F_z(z))."""
        return self.inverse_cdf(self._clamp(self.gauss_cdf(z)))


def exponential_anamorphosis(mean: float = 1.0) -> Anamorphosis:
    """Anamorphosis for an exponential variable with the given mean."""
    if mean <= 0.0:
        raise ValueError("mean must be positive")

    def forward_cdf(x):
        return -np.expm1(-np.asarray(x, float) / mean)

    def inverse_cdf(p):
        return -mean * np.log1p(-np.asarray(p, float))

    return Anamorphosis(
        forward_cdf=forward_cdf,
        inverse_cdf=inverse_cdf,
        gauss_cdf=ndtr,
        gauss_inv_cdf=ndtri,
    )


def make_example1() -> ProblemSpec:
    """1-D bimodal benchmark: concave-parabola observation of a scalar.

    Prior N(1.9, 0.1); a single observation 0.8 with variance 0.01 of
    g(x) = 1 - 9 (x - 2 pi / 3)^2 / 2.
    """
    center = 2.0 * np.pi / 3.0

    def g(x):
        return np.array([1.0 - 4.5 * (x[0] - center) ** 2])

    def jac(x):
        return np.array([[-9.0 * (x[0] - center)]])

    def second(x):
        return np.array([[[-9.0]]])

    def g_batch(pts):
        return 1.0 - 4.5 * (pts[..., 0:1] - center) ** 2

    return ProblemSpec(
        prior_mean=[1.9],
        prior_cov=[[0.1]],
        obs=[0.8],
        obs_cov=[[0.01]],
        forward=ForwardModel(eval=g, jacobian=jac, second_deriv=second, eval_batch=g_batch),
    )


_EX2_CENTERS = np.array(
    [[0.62, -0.09], [0.17, -0.04], [-0.76, 0.16], [-0.89, 0.78]]
)
_EX2_EPS = 0.05


def make_example2() -> ProblemSpec:
    """2-D multimodal benchmark: sum of four Gaussian bumps observed once.

    Independent standard-normal prior on two model variables; the scalar
    observation 1.1 (variance 0.05) of a kernel-sum response whose level set
    carves several separated high-probability regions, one of them a ring.
    """

    def kernels(x):
        diff = x - _EX2_CENTERS
        vals = np.exp(-np.sum(diff * diff, axis=1) / (2.0 * _EX2_EPS))
        return vals, diff

    def g(x):
        vals, _ = kernels(x)
        return np.array([vals.sum()])

    def jac(x):
        vals, diff = kernels(x)
        return (-(vals[:, None] * diff).sum(axis=0) / _EX2_EPS)[None, :]

    def second(x):
        vals, diff = kernels(x)
        outer = np.einsum("ki,kj->kij", diff, diff)
        hess = (vals[:, None, None] * (outer / _EX2_EPS**2 - np.eye(2) / _EX2_EPS)).sum(axis=0)
        return hess[None]

    def g_batch(pts):
        diff = pts[..., None, :] - _EX2_CENTERS
        vals = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * _EX2_EPS))
        return vals.sum(axis=-1, keepdims=True)

    return ProblemSpec(
        prior_mean=[0.0, 0.0],
        prior_cov=np.eye(2),
        obs=[1.1],
        obs_cov=[[_EX2_EPS]],
        forward=ForwardModel(eval=g, jacobian=jac, second_deriv=second, eval_batch=g_batch),
    )


def make_example3_transformed() -> tuple[ProblemSpec, Anamorphosis]:
    """1-D non-Gaussian benchmark in its Gaussianized form.

    The original variable has a unit-mean exponential prior and is observed
    directly (observation 1.0, noise variance 0.36).  Sampling works on the
    latent standard-normal variable z; the forward model maps z back to the
    original variable, so the untransformed observation operator stays the
    identity.  Returns the latent problem together with the anamorphosis used
    to move between spaces.
    """
    anam = exponential_anamorphosis(mean=1.0)

    # x(z) = -log(1 - Phi(z)) evaluated via log_ndtr for tail stability.
    def x_of_z(z):
        return -log_ndtr(-np.asarray(z, float))

    def hazard(z):
        z = np.asarray(z, float)
        return np.exp(-0.5 * z * z - _LOG_SQRT_2PI - log_ndtr(-z))

    def g(z):
        return np.array([x_of_z(z[0])])

    def jac(z):
        return np.array([[hazard(z[0])]])

    def second(z):
        lam = hazard(z[0])
        return np.array([[[lam * (lam - z[0])]]])

    def g_batch(pts):
        return x_of_z(pts[..., 0:1])

    spec = ProblemSpec(
        prior_mean=[0.0],
        prior_cov=[[1.0]],
        obs=[1.0],
        obs_cov=[[0.36]],
        forward=ForwardModel(eval=g, jacobian=jac, second_deriv=second, eval_batch=g_batch),
    )
    return spec, anam


def make_linear_problem(prior_mean, prior_cov, gain, obs, obs_cov) -> ProblemSpec:
    """Gauss-linear problem g(x) = G x for an explicit gain matrix G."""
    G = np.atleast_2d(np.asarray(gain, dtype=float))

    def g(x):
        return G @ x

    def jac(x):
        return G

    def second(x):
        return np.zeros((G.shape[0], G.shape[1], G.shape[1]))

    def g_batch(pts):
        return pts @ G.T

    return ProblemSpec(
        prior_mean=prior_mean,
        prior_cov=prior_cov,
        obs=obs,
        obs_cov=obs_cov,
        forward=ForwardModel(eval=g, jacobian=jac, second_deriv=second, eval_batch=g_batch),
    )


def make_gauss_linear() -> ProblemSpec:
    """Scalar Gauss-linear toy: standard-normal prior, identity observation."""
    return make_linear_problem(
        prior_mean=[0.0], prior_cov=[[1.0]], gain=[[1.0]], obs=[0.0], obs_cov=[[1.0]]
    )


def get_problem(name: str) -> ProblemSpec:
    """Look up a built-in problem by CLI name."""
    factories = {
        "example1": make_example1,
        "example2": make_example2,
        "example3": lambda: make_example3_transformed()[0],
        "gauss-linear": make_gauss_linear,
    }
    try:
        return factories[name]()
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; expected one of {sorted(factories)}"
        ) from None
