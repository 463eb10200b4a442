"""Ground-truth machinery: grid quadrature, conjugate posteriors, comparisons.

Grids carry unnormalized log densities plus their trapezoid normalizer, so
normalized densities, moments, mode locations, region masses, and total
variation distances against sample sets all come from one object.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_triangular

from .densities import HyperParams, log_prior_joint, log_target_marginal
from .model import ProblemSpec
from .proposal import JacobianMode, inverse_transform, jacobian_blocks, log_abs_det_jacobian

Array = np.ndarray

Axis = tuple[float, float, int]

# Local maxima below this fraction of the peak are treated as ripples.
MODE_FLOOR_REL = 1e-6


@dataclass(frozen=True)
class GridDensity:
    """A log density tabulated on a uniform rectangular grid.

    axes holds (lo, hi, n_nodes) per dimension; log_values has one entry per
    node.  normalizer is the log of the trapezoid integral of exp(log_values)
    so that exp(log_values - normalizer) integrates to one under the same
    rule.
    """

    axes: tuple[Axis, ...]
    log_values: Array
    normalizer: float

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def grids(self) -> tuple[Array, ...]:
        return tuple(np.linspace(lo, hi, n) for lo, hi, n in self.axes)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n - 1) for lo, hi, n in self.axes)

    def density(self) -> Array:
        """Normalized density values on the nodes."""
        return np.exp(self.log_values - self.normalizer)

    def node_weights(self) -> Array:
        """Trapezoid quadrature weight attached to each node."""
        w = None
        for (lo, hi, n) in self.axes:
            h = (hi - lo) / (n - 1)
            w1 = np.full(n, h)
            w1[0] = w1[-1] = 0.5 * h
            w = w1 if w is None else np.multiply.outer(w, w1)
        return w

    def mean_cov(self) -> tuple[Array, Array]:
        """First two moments of the normalized grid density."""
        dens = self.density() * self.node_weights()
        dens = dens / dens.sum()
        mesh = np.meshgrid(*self.grids, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        w = dens.ravel()
        mean = w @ pts
        centered = pts - mean
        cov = (centered * w[:, None]).T @ centered
        return mean, cov

    def cdf(self) -> Array:
        """Cumulative trapezoid integral on the nodes (1-D only)."""
        if self.ndim != 1:
            raise ValueError("cdf is defined for 1-D grids only")
        f = self.density()
        x = self.grids[0]
        inner = 0.5 * (f[1:] + f[:-1]) * np.diff(x)
        c = np.concatenate([[0.0], np.cumsum(inner)])
        return c / c[-1]

    def sample(self, rng: np.random.Generator, n: int) -> Array:
        """Inverse-CDF draws from the discretized density (1-D only)."""
        c = self.cdf()
        u = rng.uniform(size=n)
        return np.interp(u, c, self.grids[0])[:, None]

    def bin_probabilities(self, edges: Sequence[Array]) -> Array:
        """Probability mass of each rectangular bin defined by the edges."""
        if self.ndim == 1:
            c = self.cdf()
            ce = np.interp(np.asarray(edges[0], float), self.grids[0], c)
            return np.diff(ce)
        if self.ndim == 2:
            f = self.density()
            gx, gy = self.grids
            hx, hy = np.diff(gx), np.diff(gy)
            corner = f[:-1, :-1] + f[1:, :-1] + f[:-1, 1:] + f[1:, 1:]
            cell = 0.25 * corner * np.multiply.outer(hx, hy)
            cum = np.zeros((gx.size, gy.size))
            cum[1:, 1:] = np.cumsum(np.cumsum(cell, axis=0), axis=1)
            cum /= cum[-1, -1]
            interp = RegularGridInterpolator((gx, gy), cum, bounds_error=False, fill_value=None)
            ex = np.clip(np.asarray(edges[0], float), gx[0], gx[-1])
            ey = np.clip(np.asarray(edges[1], float), gy[0], gy[-1])
            mx, my = np.meshgrid(ex, ey, indexing="ij")
            F = interp(np.stack([mx.ravel(), my.ravel()], axis=-1)).reshape(mx.shape)
            return F[1:, 1:] - F[:-1, 1:] - F[1:, :-1] + F[:-1, :-1]
        raise ValueError("bin probabilities implemented for 1-D and 2-D grids")

    def find_modes(self) -> list[tuple[float, ...]]:
        """Coordinates of strict discrete local maxima above the ripple floor."""
        f = self.density()
        floor = MODE_FLOOR_REL * f.max()
        out: list[tuple[float, ...]] = []
        if self.ndim == 1:
            g = self.grids[0]
            for i in range(1, f.size - 1):
                if f[i] > f[i - 1] and f[i] > f[i + 1] and f[i] >= floor:
                    out.append((float(g[i]),))
            return out
        if self.ndim == 2:
            gx, gy = self.grids
            for i in range(1, f.shape[0] - 1):
                for j in range(1, f.shape[1] - 1):
                    v = f[i, j]
                    if v < floor:
                        continue
                    patch = f[i - 1 : i + 2, j - 1 : j + 2].copy()
                    patch[1, 1] = -np.inf
                    if v > patch.max():
                        out.append((float(gx[i]), float(gy[j])))
            return out
        raise ValueError("mode finding implemented for 1-D and 2-D grids")

    def regions(self, rel_threshold: float) -> tuple[Array, Array]:
        """Connected high-density regions and their probability masses.

        Nodes with density >= rel_threshold * max are labeled into connected
        components (full neighbor connectivity).  Returns the label array
        (0 = below threshold) and the mass of each label, index 0 holding the
        below-threshold remainder.
        """
        f = self.density()
        mask = f >= rel_threshold * f.max()
        structure = np.ones((3,) * self.ndim)
        labels, n_regions = ndimage.label(mask, structure=structure)
        w = self.node_weights() * f
        masses = np.zeros(n_regions + 1)
        for lab in range(n_regions + 1):
            masses[lab] = w[labels == lab].sum()
        masses /= masses.sum()
        return labels, masses

    def assign_to_regions(self, samples: Array, labels: Array) -> Array:
        """Region label of each sample via its nearest grid node."""
        samples = np.atleast_2d(np.asarray(samples, float))
        idx = []
        for axis_i, (lo, hi, n) in enumerate(self.axes):
            h = (hi - lo) / (n - 1)
            ix = np.rint((samples[:, axis_i] - lo) / h).astype(int)
            idx.append(np.clip(ix, 0, n - 1))
        return labels[tuple(idx)]

    def write_csv(self, path) -> None:
        """Node coordinates and normalized density, one node per row."""
        mesh = np.meshgrid(*self.grids, indexing="ij")
        cols = [m.ravel() for m in mesh] + [self.density().ravel()]
        header = [f"x_{i + 1}" for i in range(self.ndim)] + ["density"]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in zip(*cols):
                fh.write(",".join("%.17g" % v for v in row) + "\n")


def _log_trapezoid_norm(log_values: Array, axes: Sequence[Axis]) -> float:
    peak = float(np.max(log_values))
    scaled = np.exp(log_values - peak)
    for lo, hi, n in reversed(list(axes)):
        scaled = np.trapezoid(scaled, dx=(hi - lo) / (n - 1), axis=-1)
    return peak + float(np.log(scaled))


def grid_from_log_density(
    fn: Callable[[Array], float],
    axes: Sequence[Axis],
    batch_fn: Optional[Callable[[Array], Array]] = None,
) -> GridDensity:
    """Tabulate an unnormalized log density over a rectangular grid.

    fn takes a point vector; batch_fn, when given, takes an (..., ndim) array
    of points and is preferred.
    """
    axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in axes)
    grids = [np.linspace(lo, hi, n) for lo, hi, n in axes]
    mesh = np.meshgrid(*grids, indexing="ij")
    pts = np.stack(mesh, axis=-1)
    if batch_fn is not None:
        log_values = np.asarray(batch_fn(pts), dtype=float)
    else:
        flat = pts.reshape(-1, len(axes))
        log_values = np.array([fn(v) for v in flat]).reshape(mesh[0].shape)
    return GridDensity(
        axes=axes, log_values=log_values, normalizer=_log_trapezoid_norm(log_values, axes)
    )


def default_axes(p: ProblemSpec, n: int, half_width_sigmas: float = 6.0) -> tuple[Axis, ...]:
    """Prior mean +- a multiple of the prior standard deviation per axis."""
    sd = np.sqrt(np.diag(p.prior_cov))
    return tuple(
        (float(m - half_width_sigmas * s), float(m + half_width_sigmas * s), n)
        for m, s in zip(p.prior_mean, sd)
    )


def grid_marginal(p: ProblemSpec, axes: Optional[Sequence[Axis]] = None, n: int = 2048) -> GridDensity:
    """Normalized grid of the marginal target density (dim_x <= 2)."""
    if p.dim_x > 2:
        raise ValueError("grid quadrature supports dim_x <= 2 only")
    axes = tuple(axes) if axes is not None else default_axes(p, n)

    batch = None
    if p.forward.eval_batch is not None:

        def batch(pts: Array) -> Array:
            gx = p.forward.eval_batch(pts)
            dx = pts - p.prior_mean
            qx = _batch_quad(p.chol_x, dx)
            qd = _batch_quad(p.chol_d, gx - p.obs)
            return -0.5 * (qx + qd)

    return grid_from_log_density(lambda x: log_target_marginal(p, x), axes, batch)


def _batch_quad(chol_lower: Array, vecs: Array) -> Array:
    """Quadratic forms v^T (L L^T)^{-1} v over a (..., k) stack of vectors."""
    flat = vecs.reshape(-1, vecs.shape[-1])
    y = solve_triangular(chol_lower, flat.T, lower=True)
    return np.sum(y * y, axis=0).reshape(vecs.shape[:-1])


def grid_joint_1d(
    p: ProblemSpec, h: HyperParams, x_axis: Axis, d_axis: Axis
) -> GridDensity:
    """Joint (x, d) target density grid for a 1-D problem."""
    if p.dim_x != 1 or p.dim_d != 1:
        raise ValueError("joint grids are implemented for 1-D problems only")
    sx = float(p.prior_cov[0, 0])
    sd = float(p.obs_cov[0, 0])
    mu = float(p.prior_mean[0])
    dobs = float(p.obs[0])
    xs = np.linspace(*x_axis)
    ds = np.linspace(*d_axis)
    gx = np.array([float(p.forward.eval(np.array([x]))[0]) for x in xs])
    lv = (
        -0.5 * (xs[:, None] - mu) ** 2 / sx
        - 0.5 * (gx[:, None] - ds[None, :]) ** 2 / (h.gamma * sd)
        - 0.5 * (ds[None, :] - dobs) ** 2 / ((1.0 - h.gamma) * sd)
    )
    axes = (x_axis, d_axis)
    return GridDensity(axes=axes, log_values=lv, normalizer=_log_trapezoid_norm(lv, axes))


def grid_proposal_1d(
    p: ProblemSpec,
    h: HyperParams,
    x_axis: Axis,
    d_axis: Axis,
    mode: JacobianMode = JacobianMode.FULL,
) -> GridDensity:
    """Proposal density grid over candidate pairs for a 1-D problem.

    Evaluates the change-of-variables density pointwise: prior density of the
    inverse-mapped draw times |det J|.  Points with nonpositive determinant
    contribute zero probability (log density -inf).
    """
    if p.dim_x != 1 or p.dim_d != 1:
        raise ValueError("proposal grids are implemented for 1-D problems only")
    xs = np.linspace(*x_axis)
    ds = np.linspace(*d_axis)
    lv = np.full((xs.size, ds.size), -np.inf)
    for i, x in enumerate(xs):
        xv = np.array([x])
        for j, d in enumerate(ds):
            dv = np.array([d])
            blocks = jacobian_blocks(p, h, xv, dv, mode)
            det = np.linalg.det(blocks.assemble())
            if det == 0.0:
                continue
            x_uc, d_uc = inverse_transform(p, h, xv, dv)
            lv[i, j] = log_prior_joint(p, x_uc, d_uc) + np.log(abs(det))
    axes = (x_axis, d_axis)
    return GridDensity(axes=axes, log_values=lv, normalizer=_log_trapezoid_norm(lv, axes))


def conjugate_posterior(
    prior_mean, prior_cov, G, d_obs, obs_cov
) -> tuple[Array, Array]:
    """Exact Gaussian posterior for a linear forward model.

    Returns (mean, cov) with cov the inverse of the posterior precision
    prior_cov^{-1} + G^T obs_cov^{-1} G.
    """
    mu = np.atleast_1d(np.asarray(prior_mean, float))
    cx = np.atleast_2d(np.asarray(prior_cov, float))
    cd = np.atleast_2d(np.asarray(obs_cov, float))
    G = np.atleast_2d(np.asarray(G, float))
    dobs = np.atleast_1d(np.asarray(d_obs, float))
    precision = np.linalg.inv(cx) + G.T @ np.linalg.solve(cd, G)
    try:
        cov = np.linalg.inv(precision)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular normal-equations matrix: {exc}") from exc
    mean = mu + cov @ (G.T @ np.linalg.solve(cd, dobs - G @ mu))
    return mean, cov


@dataclass(frozen=True)
class SampleGridReport:
    tv_distance: float
    mean_error: Array
    cov_error: Array
    n_samples: int


def compare_samples_to_grid(
    samples: Array, grid: GridDensity, n_bins: int = 64
) -> SampleGridReport:
    """Histogram a sample set on the grid's support and compare to the density.

    Total variation is half the L1 distance between bin masses; moment errors
    are absolute differences of sample and grid mean / covariance.
    """
    samples = np.asarray(samples, float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    if samples.shape[1] != grid.ndim:
        raise ValueError(
            f"sample dimension {samples.shape[1]} does not match grid dimension {grid.ndim}"
        )
    edges = [np.linspace(lo, hi, n_bins + 1) for lo, hi, _ in grid.axes]
    p_bins = grid.bin_probabilities(edges)
    if grid.ndim == 1:
        counts, _ = np.histogram(samples[:, 0], bins=edges[0])
    else:
        counts, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=edges)
    q_bins = counts / samples.shape[0]
    out_p = 1.0 - float(p_bins.sum())
    out_q = 1.0 - float(q_bins.sum())
    # Mass falling outside the binned box counts as one extra bin.
    tv = 0.5 * (float(np.abs(p_bins - q_bins).sum()) + abs(out_p - out_q))
    g_mean, g_cov = grid.mean_cov()
    s_mean = samples.mean(axis=0)
    centered = samples - s_mean
    s_cov = centered.T @ centered / samples.shape[0]
    return SampleGridReport(
        tv_distance=tv,
        mean_error=np.abs(s_mean - g_mean),
        cov_error=np.abs(s_cov - g_cov),
        n_samples=samples.shape[0],
    )
