"""Closed-form MSE comparison of noise estimation with and without sign knowledge.

The SD process is ``g_k + mu`` with ``g_k`` a stationary AR(1) sequence
(coefficient ``a``, stationary variance ``gamma2``), multiplied by white
unit-variance noise ``w_k`` with ``E|w_k| = beta`` and observed in additive
white noise of variance ``sigma2``.

* Without signs the best linear estimator of ``(g_k + mu) w_k`` uses only the
  current sample (``mse_unknown_signs``).
* With signs the target ``(g_k + mu)|w_k|`` shares its second-order
  structure with ``m + q_k + eps_k``, ``q`` an AR(1) state, so a scalar
  Kalman filter is optimal (``riccati_P``, ``mse_known_signs``).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class TheoryParams:
    a: float
    gamma2: float
    mu: float = 0.0
    beta: float = float(np.sqrt(2.0 / np.pi))
    sigma2: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.a < 1.0:
            raise ValueError(f"a must lie in [0, 1), got {self.a}")
        if self.gamma2 < 0 or self.sigma2 < 0:
            raise ValueError("variances must be nonnegative")
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")

    @classmethod
    def from_innovation(cls, a: float, ell2: float, **kw) -> "TheoryParams":
        """Build from the AR(1) innovation variance instead of the stationary one."""
        if not 0.0 <= a < 1.0:
            raise ValueError(f"a must lie in [0, 1), got {a}")
        return cls(a=a, gamma2=ell2 / (1.0 - a * a), **kw)

    @property
    def ell2(self) -> float:
        return self.gamma2 * (1.0 - self.a * self.a)

    @property
    def process_var(self) -> float:
        """``Q = beta^2 ell^2``, innovation variance of the surrogate state."""
        return self.beta**2 * self.ell2

    @property
    def eps_var(self) -> float:
        """Variance of the white part of the surrogate target."""
        return (self.gamma2 + self.mu**2) * (1.0 - self.beta**2)

    @property
    def obs_var(self) -> float:
        """``R``: white observation noise seen by the surrogate filter."""
        return self.eps_var + self.sigma2

    @property
    def p0(self) -> float:
        return self.beta**2 * (self.gamma2 + self.mu**2)


@dataclass(frozen=True)
class MseReport:
    mse1: float
    P: float
    mse2: float
    r: float


def mse_unknown_signs(p: TheoryParams) -> float:
    v = p.gamma2 + p.mu**2
    total = v + p.sigma2
    return 0.0 if total == 0 else v * p.sigma2 / total


def riccati_P(p: TheoryParams) -> float:
    """Positive root of ``P^2 + ((1 - a^2) R - Q) P - Q R = 0``."""
    q, r = p.process_var, p.obs_var
    b = (1.0 - p.a**2) * r - q
    disc = np.sqrt(b * b + 4.0 * q * r)
    if b > 0:
        # Avoids cancellation in (-b + disc) / 2.
        return float(2.0 * q * r / (b + disc))
    return float((-b + disc) / 2.0)


def are_residual(p: TheoryParams, P: float) -> float:
    """``P - (a^2 P - a^2 P^2 / (P + R) + Q)``."""
    r = p.obs_var
    if P + r == 0:
        return P - p.process_var
    return P - (p.a**2 * P - p.a**2 * P * P / (P + r) + p.process_var)


def factorized_are(p: TheoryParams, P: float) -> float:
    """The ARE rewritten as ``(1 - a^2)(P - beta^2 gamma^2)(P - P0 + gamma^2 + mu^2 + sigma^2) + a^2 P^2``."""
    a2 = p.a**2
    return (1.0 - a2) * (P - p.beta**2 * p.gamma2) * (P - p.p0 + p.gamma2 + p.mu**2 + p.sigma2) + a2 * P * P


def mse_known_signs(p: TheoryParams) -> float:
    if p.sigma2 == 0:
        return 0.0
    v = riccati_P(p) + p.eps_var
    return 0.0 if v == 0 else v * p.sigma2 / (v + p.sigma2)


def mse_ratio(p: TheoryParams) -> float:
    m1 = mse_unknown_signs(p)
    if m1 <= 0:
        raise ValueError("ratio undefined: the unknown-sign MSE is zero")
    return mse_known_signs(p) / m1


def mse_report(p: TheoryParams) -> MseReport:
    m1 = mse_unknown_signs(p)
    m2 = mse_known_signs(p)
    return MseReport(mse1=m1, P=riccati_P(p), mse2=m2, r=m2 / m1 if m1 > 0 else float("nan"))


def iterate_riccati(p: TheoryParams, tol: float = 1e-15, max_iter: int = 10_000_000) -> float:
    """Fixed-point iteration of the prediction Riccati recursion from ``P = Q``."""
    q, r, a2 = p.process_var, p.obs_var, p.a**2
    P = q
    for _ in range(max_iter):
        nxt = a2 * P - (a2 * P * P / (P + r) if P + r > 0 else 0.0) + q
        if abs(nxt - P) <= tol * max(P, 1e-300):
            return nxt
        P = nxt
    return P


def kalman_empirical_mse(
    p: TheoryParams,
    horizon: int = 100_000,
    replicates: int = 20,
    rng: np.random.Generator | int | None = None,
) -> float:
    """Empirical filtering MSE of the surrogate target ``m + q_k + eps_k``.

    Simulates ``replicates`` independent surrogate paths, runs the
    time-varying scalar Kalman filter from the stationary prior, and averages
    the squared error of the filtered target estimate over the second half
    of the horizon.
    """
    rng = np.random.default_rng(rng)
    a = p.a
    q_var, eps_var, s2 = p.process_var, p.eps_var, p.sigma2
    r = eps_var + s2
    m = p.mu * p.beta
    stat_var = p.beta**2 * p.gamma2

    q = rng.standard_normal(replicates) * np.sqrt(stat_var)
    q_pred = np.zeros(replicates)
    P = stat_var
    sq_q, sq_e, sq_s = np.sqrt(q_var), np.sqrt(eps_var), np.sqrt(s2)
    start = horizon // 2
    acc = 0.0
    for k in range(horizon):
        eps = sq_e * rng.standard_normal(replicates)
        e = sq_s * rng.standard_normal(replicates)
        z = m + q + eps
        innov = z + e - m - q_pred
        s = P + r
        gain_z = (P + eps_var) / s if s > 0 else 0.0
        gain_q = P / s if s > 0 else 0.0
        z_hat = m + q_pred + gain_z * innov
        if k >= start:
            acc += float(np.sum((z - z_hat) ** 2))
        q_filt = q_pred + gain_q * innov
        P_filt = P - P * gain_q
        q_pred = a * q_filt
        P = a * a * P_filt + q_var
        q = a * q + sq_q * rng.standard_normal(replicates)
    return acc / ((horizon - start) * replicates)


def r_curve(base: TheoryParams, a_grid) -> list[dict[str, float]]:
    """``r`` along ``a`` with ``gamma2`` held fixed (``ell2`` re-derived per point)."""
    rows = []
    for a in a_grid:
        p = replace(base, a=float(a))
        rep = mse_report(p)
        rows.append({"a": float(a), "mse1": rep.mse1, "P": rep.P, "mse2": rep.mse2, "r": rep.r})
    return rows
