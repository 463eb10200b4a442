"""Small dense-linear-algebra helpers shared by the density and sampler code.

Covariances are handled through cached lower Cholesky factors; quadratic
forms and inverse applications go through triangular solves, never through
explicit matrix inverses.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

Array = np.ndarray


def spd_cholesky(mat: Array, name: str = "matrix") -> Array:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises ValueError if the matrix is not symmetric to round-off or not
    positive definite.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=1e-12, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} must be positive definite: {exc}") from exc


def chol_solve(chol_lower: Array, b: Array) -> Array:
    """Solve (L L^T) x = b given the lower Cholesky factor L."""
    y = solve_triangular(chol_lower, b, lower=True)
    return solve_triangular(chol_lower.T, y, lower=False)


def chol_quad(chol_lower: Array, v: Array) -> float:
    """Quadratic form v^T (L L^T)^{-1} v given the lower Cholesky factor L."""
    y = solve_triangular(chol_lower, v, lower=True)
    return float(y @ y)
