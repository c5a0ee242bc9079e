"""Regularized solves, Gaussian log-evidence and evidence maximization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
MAX_JITTER_RETRIES = 6


class NumericalFailure(RuntimeError):
    """Raised when a covariance matrix cannot be factorized."""

    def __init__(self, message: str, jitter: float = 0.0):
        super().__init__(message)
        self.jitter = jitter


class OptimizationFailure(RuntimeError):
    pass


@dataclass
class CovarianceModel:
    """A symmetric PSD matrix together with its Cholesky factor.

    The factor is computed on construction.  ``jitter`` records the diagonal
    shift that was actually needed (zero when the matrix factorized as is).
    """

    matrix: np.ndarray
    jitter: float = field(init=False, default=0.0)

    def __post_init__(self):
        c = np.asarray(self.matrix, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"covariance must be square, got shape {c.shape}")
        self.matrix = c
        self._factor, self.jitter = _cholesky_with_jitter(c)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, rhs) -> np.ndarray:
        return sla.cho_solve((self._factor, True), rhs, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diagonal(self._factor))))


def _cholesky_with_jitter(c: np.ndarray) -> tuple[np.ndarray, float]:
    if not np.all(np.isfinite(c)):
        raise NumericalFailure("covariance has non-finite entries", 0.0)
    try:
        return sla.cholesky(c, lower=True, check_finite=False), 0.0
    except sla.LinAlgError:
        pass
    n = c.shape[0]
    trace = float(np.trace(c))
    jitter = 1e-12 * (trace / n if trace > 0 else 1.0)
    for _ in range(MAX_JITTER_RETRIES):
        try:
            factor = sla.cholesky(c + jitter * np.eye(n), lower=True, check_finite=False)
            logger.debug("cholesky succeeded with jitter %.3e", jitter)
            return factor, jitter
        except sla.LinAlgError:
            jitter *= 10.0
    raise NumericalFailure(f"cholesky failed after {MAX_JITTER_RETRIES} jitter escalations", jitter / 10.0)


def _as_model(c) -> CovarianceModel:
    return c if isinstance(c, CovarianceModel) else CovarianceModel(c)


def solve_regularized(c, z) -> np.ndarray:
    """Return ``C^{-1} z`` through a (possibly jittered) Cholesky factorization."""
    model = _as_model(c)
    z = np.asarray(z, dtype=float)
    if z.shape[0] != model.size:
        raise ValueError(f"dimension mismatch: C is {model.size}x{model.size}, z has {z.shape[0]} rows")
    return model.solve(z)


def log_evidence(c, z, mean=None) -> float:
    """Gaussian log marginal likelihood of ``z`` under ``N(mean, C)``."""
    model = _as_model(c)
    z = np.asarray(z, dtype=float)
    if z.shape != (model.size,):
        raise ValueError(f"dimension mismatch: C is {model.size}x{model.size}, z has shape {z.shape}")
    r = z if mean is None else z - np.asarray(mean, dtype=float)
    alpha = model.solve(r)
    return float(-0.5 * r @ alpha - 0.5 * model.logdet() - 0.5 * model.size * LOG_2PI)


@dataclass(frozen=True)
class HyperparamBox:
    """Axis-aligned bounds for positive hyperparameters, searched in log10."""

    names: tuple[str, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    grid_points: int = 7

    def __post_init__(self):
        if not (len(self.names) == len(self.lower) == len(self.upper)) or not self.names:
            raise ValueError("names, lower and upper must be nonempty and of equal length")
        for name, lo, hi in zip(self.names, self.lower, self.upper):
            if not (0 < lo < hi and np.isfinite(hi)):
                raise ValueError(f"invalid bounds for {name}: ({lo}, {hi})")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")

    @property
    def log_lower(self) -> np.ndarray:
        return np.log10(np.asarray(self.lower, dtype=float))

    @property
    def log_upper(self) -> np.ndarray:
        return np.log10(np.asarray(self.upper, dtype=float))

    def grid(self) -> np.ndarray:
        """All grid points (log10 coordinates) in lexicographic order."""
        axes = [np.linspace(lo, hi, self.grid_points) for lo, hi in zip(self.log_lower, self.log_upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def clip(self, log_params) -> np.ndarray:
        return np.clip(log_params, self.log_lower, self.log_upper)


@dataclass(frozen=True)
class EvidenceOptimum:
    names: tuple[str, ...]
    params: tuple[float, ...]
    value: float
    evaluations: int

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.params))


def _safe_eval(objective, params) -> float:
    try:
        v = float(objective(params))
    except (NumericalFailure, FloatingPointError, ValueError, np.linalg.LinAlgError):
        return -np.inf
    return v if np.isfinite(v) else -np.inf


def maximize_evidence(
    objective: Callable[[np.ndarray], float],
    box: HyperparamBox,
    max_refine: int = 200,
    xatol: float = 1e-3,
    fatol: float = 1e-6,
) -> EvidenceOptimum:
    """Maximize ``objective`` over ``box``: log-grid scan, then Nelder-Mead.

    ``objective`` receives hyperparameters on their natural (positive) scale,
    ordered as ``box.names``.  Evaluations that raise a numerical error or
    return a non-finite value count as ``-inf``.

    Raises
    ------
    OptimizationFailure
        If no grid point yields a finite value.
    """
    grid = box.grid()
    values = np.array([_safe_eval(objective, 10.0**g) for g in grid])
    n_evals = len(grid)
    if not np.any(np.isfinite(values)):
        raise OptimizationFailure("objective is non-finite at every grid point")
    # Ties go to the lexicographically smallest grid point (argmax takes the first).
    best = int(np.argmax(values))
    x0, f0 = grid[best], values[best]

    if max_refine <= 0:
        return EvidenceOptimum(box.names, tuple(10.0**x0), float(f0), n_evals)

    lo, hi = box.log_lower, box.log_upper
    step = (hi - lo) / (box.grid_points - 1) / 2.0
    simplex = [x0]
    for i in range(len(x0)):
        v = x0.copy()
        v[i] = v[i] + step[i] if v[i] + step[i] <= hi[i] else v[i] - step[i]
        simplex.append(v)

    cache: dict[bytes, float] = {}

    def neg(x):
        x = box.clip(x)
        key = x.tobytes()
        if key not in cache:
            cache[key] = _safe_eval(objective, 10.0**x)
        v = cache[key]
        return -v if np.isfinite(v) else 1e300

    res = minimize(
        neg,
        x0,
        method="Nelder-Mead",
        bounds=list(zip(lo, hi)),
        options={
            "maxfev": max_refine,
            "initial_simplex": np.array(simplex),
            "xatol": xatol,
            "fatol": fatol,
        },
    )
    n_evals += len(cache)
    x_ref = box.clip(res.x)
    f_ref = -neg(x_ref)
    if f_ref >= f0:
        return EvidenceOptimum(box.names, tuple(10.0**x_ref), float(f_ref), n_evals)
    return EvidenceOptimum(box.names, tuple(10.0**x0), float(f0), n_evals)


def box_from_scales(
    names: Sequence[str],
    centers: Sequence[float],
    spans: Sequence[tuple[float, float]],
    grid_points: int = 7,
) -> HyperparamBox:
    """Build a box from per-parameter reference scales and multiplicative spans."""
    lower = tuple(c * s[0] for c, s in zip(centers, spans))
    upper = tuple(c * s[1] for c, s in zip(centers, spans))
    return HyperparamBox(tuple(names), lower, upper, grid_points)
