"""Gaussian kernels and the sign-informed structured kernel.

The width ``l`` of every Gaussian kernel in this package multiplies the
*squared* distance directly::

    k(x, x') = amplitude * exp(-||x - x'||^2 / (2 * width))

so ``width`` carries squared-length units.  Kernel matrices are dense.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# E|w| for unit-variance noise families.
BETA = {
    "gaussian": float(np.sqrt(2.0 / np.pi)),
    "laplacian": float(np.sqrt(0.5)),
    "bernoulli": 1.0,
}


def beta_for(family: str | float) -> float:
    """Resolve a noise-family name (or an explicit value) to ``beta = E|w|``."""
    if isinstance(family, str):
        try:
            return BETA[family.lower()]
        except KeyError:
            raise ValueError(f"unknown noise family {family!r}; expected one of {sorted(BETA)}") from None
    beta = float(family)
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    return beta


@dataclass(frozen=True)
class GaussianKernelParams:
    amplitude: float
    width: float

    def __post_init__(self):
        if not (self.amplitude > 0 and np.isfinite(self.amplitude)):
            raise ValueError(f"amplitude must be positive and finite, got {self.amplitude}")
        if not (self.width > 0 and np.isfinite(self.width)):
            raise ValueError(f"width must be positive and finite, got {self.width}")


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts[:, None]
    elif pts.ndim != 2:
        raise ValueError(f"points must be a 1-D or 2-D array, got shape {pts.shape}")
    return pts


def sign_vector(values) -> np.ndarray:
    """Entrywise sign with ``sign(0) = +1``; returns floats in {-1, +1}."""
    values = np.asarray(values, dtype=float)
    return np.where(values >= 0.0, 1.0, -1.0)


def gaussian_kernel(x_a, x_b, params: GaussianKernelParams) -> float:
    """Evaluate the Gaussian kernel between two states."""
    a = np.atleast_1d(np.asarray(x_a, dtype=float))
    b = np.atleast_1d(np.asarray(x_b, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d2 = float(np.sum((a - b) ** 2))
    return params.amplitude * float(np.exp(-d2 / (2.0 * params.width)))


def squared_distances(x, y=None) -> np.ndarray:
    """Pairwise squared Euclidean distances between the rows of ``x`` and ``y``.

    Computed from explicit differences, so the result is exactly symmetric
    when ``y`` is omitted and identical wherever the same rows meet.
    """
    x = _as_points(x)
    y = x if y is None else _as_points(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    d2 = np.zeros((x.shape[0], y.shape[0]))
    for j in range(x.shape[1]):
        diff = x[:, j, None] - y[None, :, j]
        d2 += diff * diff
    return d2


def kernel_from_sqdist(d2: np.ndarray, params: GaussianKernelParams) -> np.ndarray:
    return params.amplitude * np.exp(d2 * (-0.5 / params.width))


def kernel_matrix(points, params: GaussianKernelParams, others=None) -> np.ndarray:
    """Gaussian kernel matrix over ``points`` (or cross-matrix against ``others``).

    Parameters
    ----------
    points : array_like, shape (m,) or (m, d)
        States; 1-D input is treated as m scalar states.
    params : GaussianKernelParams
    others : array_like, optional
        If given, returns the (m, p) cross-kernel between ``points`` and ``others``.
    """
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("kernel_matrix needs at least one point")
    return kernel_from_sqdist(squared_distances(pts, others), params)


def correction_matrix(n: int, beta: float) -> np.ndarray:
    """``beta^2 * 1 1^T + (1 - beta^2) * I``: unit diagonal, ``beta^2`` elsewhere."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    b2 = beta * beta
    q = np.full((n, n), b2)
    np.fill_diagonal(q, 1.0)
    return q


def structured_kernel(g_matrix, signs, beta: float, mean_term: float = 0.0) -> np.ndarray:
    """Sign-informed covariance of the intrinsic-noise realizations.

    Returns ``S (G o Q) S`` with ``S = diag(signs)`` and ``Q`` the correction
    matrix; when ``mean_term`` is positive, ``mean_term^2 (1 - beta^2)`` is
    added to the diagonal.
    """
    g = np.asarray(g_matrix, dtype=float)
    s = np.asarray(signs, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"g_matrix must be square, got shape {g.shape}")
    if s.shape != (g.shape[0],):
        raise ValueError(f"signs length {s.shape} does not match g_matrix {g.shape}")
    if not np.all(np.abs(s) == 1.0):
        raise ValueError("signs must be exactly -1 or +1")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if mean_term < 0:
        raise ValueError(f"mean_term must be nonnegative, got {mean_term}")
    k = (beta * beta) * (s[:, None] * g * s[None, :])
    diag = np.diagonal(g).copy()
    if mean_term > 0:
        diag += mean_term**2 * (1.0 - beta * beta)
    np.fill_diagonal(k, diag)
    return k
