"""Three-stage intrinsic-noise SD estimator and its unstructured / oracle variants.

Each run handles one output coordinate: the kernel inputs are the full
noisy states ``y_k`` and the targets are ``z_k``, the next observation of
that coordinate.

Stage 1 fits a smooth GP for the one-step map plus white noise of constant
variance and keeps the signs of the residual weights.  Stage 2 refits the
noise with the sign-informed structured kernel.  Stage 3 smooths
``|n_hat| / beta`` with a Gaussian-kernel ridge regression, giving the SD
profile ``G`` (``g = G / sqrt(dt)`` for continuous-time systems).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np

from .gp_solver import (
    LOG_2PI,
    CovarianceModel,
    EvidenceOptimum,
    HyperparamBox,
    log_evidence,
    maximize_evidence,
)
from .kernels import BETA, GaussianKernelParams, kernel_from_sqdist, sign_vector, squared_distances, structured_kernel

logger = logging.getLogger(__name__)

STAGE1 = ("lambda_f", "l_f", "rho_n")
STAGE2 = ("lambda_w", "l_w")
STAGE3 = ("lambda_g", "l_g", "rho_g")
HYPERPARAMS = STAGE1 + STAGE2 + STAGE3

CONTINUOUS = "continuous"
DISCRETE = "discrete"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Input/output pairs ``(y_k, z_k = y_{k+1}[coordinate])`` for one coordinate.

    Attributes
    ----------
    inputs : ndarray, shape (m, d)
        Noisy states ``y_k``.
    outputs : ndarray, shape (m,)
        Targets ``z_k``.
    sigma_e : ndarray, shape (m,)
        Measurement-noise variance on each ``z_k``.
    dt : float
        Sampling interval.
    kind : {"continuous", "discrete"}
    boundaries : tuple of int
        Start index of each trajectory's block of pairs.
    true_noise : ndarray, shape (m,), optional
        Recorded intrinsic increments (simulation only), used by the oracle.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    sigma_e: np.ndarray
    dt: float = 1.0
    kind: str = DISCRETE
    boundaries: tuple[int, ...] = (0,)
    coordinate: int = 0
    true_noise: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        z = np.asarray(self.outputs, dtype=float).ravel()
        se = np.broadcast_to(np.asarray(self.sigma_e, dtype=float), z.shape).copy()
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", z)
        object.__setattr__(self, "sigma_e", se)
        if x.shape[0] != z.shape[0]:
            raise ValueError(f"inputs have {x.shape[0]} rows but outputs have {z.shape[0]}")
        if z.shape[0] < 1:
            raise ValueError("training set is empty")
        if np.any(se < 0) or not np.all(np.isfinite(se)):
            raise ValueError("sigma_e entries must be finite and >= 0")
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise ValueError(f"kind must be {CONTINUOUS!r} or {DISCRETE!r}, got {self.kind!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.true_noise is not None:
            tn = np.asarray(self.true_noise, dtype=float).ravel()
            if tn.shape != z.shape:
                raise ValueError("true_noise must align with outputs")
            object.__setattr__(self, "true_noise", tn)

    def __len__(self) -> int:
        return self.outputs.shape[0]

    @cached_property
    def sqdist(self) -> np.ndarray:
        return squared_distances(self.inputs)

    @cached_property
    def median_sqdist(self) -> float:
        m = len(self)
        if m < 2:
            return 1.0
        iu = np.triu_indices(m, k=1)
        med = float(np.median(self.sqdist[iu]))
        return med if med > 0 else 1.0

    @property
    def g_scale(self) -> float:
        """Factor converting ``G`` into ``g``."""
        return 1.0 / np.sqrt(self.dt) if self.kind == CONTINUOUS else 1.0


@dataclass(frozen=True)
class StageHyperparams:
    lambda_f: float | None = None
    l_f: float | None = None
    rho_n: float | None = None
    lambda_w: float | None = None
    l_w: float | None = None
    lambda_g: float | None = None
    l_g: float | None = None
    rho_g: float | None = None
    beta: float = BETA["gaussian"]
    mu: float = 0.0

    def __post_init__(self):
        for name in HYPERPARAMS:
            v = getattr(self, name)
            if v is not None and not (v > 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")

    def require(self, names) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValueError(f"missing hyperparameters: {', '.join(missing)}")

    def as_dict(self) -> dict[str, float | None]:
        return {n: getattr(self, n) for n in HYPERPARAMS + ("beta", "mu")}


@dataclass(frozen=True)
class NoiseRealizationEstimate:
    values: np.ndarray
    provenance: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("noise estimate has non-finite entries")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class SdProfile:
    """Kernel expansion ``G(x) = sum_k c_k lambda_g exp(-||x - y_k||^2 / (2 l_g))``."""

    weights: np.ndarray
    centers: np.ndarray
    amplitude: float
    width: float
    dt: float = 1.0
    kind: str = DISCRETE

    @property
    def kernel(self) -> GaussianKernelParams:
        return GaussianKernelParams(self.amplitude, self.width)

    def G(self, x) -> np.ndarray:
        """Noise SD over one sampling interval, evaluated at the rows of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.centers.shape[1] == 1 else x[None, :]
        return kernel_from_sqdist(squared_distances(x, self.centers), self.kernel) @ self.weights

    def g(self, x) -> np.ndarray:
        """Diffusion SD ``g`` (``G / sqrt(dt)`` for continuous systems)."""
        return self.G(x) * self.g_scale

    @property
    def g_scale(self) -> float:
        return 1.0 / np.sqrt(self.dt) if self.kind == CONTINUOUS else 1.0

    @cached_property
    def values(self) -> np.ndarray:
        """``G`` at the centers."""
        return self.G(self.centers)


@dataclass(frozen=True)
class TrineConfig:
    """Estimator settings.

    ``fixed`` pins hyperparameters by name (skipping their optimization);
    ``bounds`` overrides the default search box of a hyperparameter with
    absolute ``(lower, upper)`` values.
    """

    beta: float = BETA["gaussian"]
    mean_term: bool = False
    fixed: Mapping[str, float] = field(default_factory=dict)
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    grid_points: int = 7
    max_refine: int = 200

    def __post_init__(self):
        unknown = (set(self.fixed) | set(self.bounds)) - set(HYPERPARAMS)
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")


@dataclass(frozen=True)
class Stage1Fit:
    signs: np.ndarray
    noise: NoiseRealizationEstimate
    hyperparams: StageHyperparams
    evidence: float
    evaluations: int


@dataclass(frozen=True)
class TrineResult:
    profile: SdProfile
    signs: np.ndarray | None
    noise: NoiseRealizationEstimate
    hyperparams: StageHyperparams
    evidence: dict[str, float]
    stage1_noise: NoiseRealizationEstimate | None = None


# ---------------------------------------------------------------------------
# closed-form stages


def _stage1_matrix(ts: TrainingSet, lam: float, ell: float, rho: float) -> np.ndarray:
    c = kernel_from_sqdist(ts.sqdist, GaussianKernelParams(lam, ell))
    c[np.diag_indices_from(c)] += ts.sigma_e + rho
    return c


def _kf_plus_sigma(ts: TrainingSet, hp: StageHyperparams) -> np.ndarray:
    c = kernel_from_sqdist(ts.sqdist, GaussianKernelParams(hp.lambda_f, hp.l_f))
    c[np.diag_indices_from(c)] += ts.sigma_e
    return c


def _stage2_kernel(ts: TrainingSet, signs, hp: StageHyperparams) -> np.ndarray:
    g = kernel_from_sqdist(ts.sqdist, GaussianKernelParams(hp.lambda_w, hp.l_w))
    return structured_kernel(g, signs, hp.beta, hp.mu)


def stage1_signs(ts: TrainingSet, hp: StageHyperparams) -> tuple[np.ndarray, NoiseRealizationEstimate, float]:
    """Sign estimates and the unstructured noise estimate.

    Returns ``(s, rho_n * C^{-1} z, rho_n)`` with ``C = K_f + Sigma_e + rho_n I``
    and ``s = sign(C^{-1} z)``.
    """
    hp.require(STAGE1)
    model = CovarianceModel(_stage1_matrix(ts, hp.lambda_f, hp.l_f, hp.rho_n))
    c_hat = model.solve(ts.outputs)
    return sign_vector(c_hat), NoiseRealizationEstimate(hp.rho_n * c_hat, "stage1"), hp.rho_n


def stage2_noise(ts: TrainingSet, signs, hp: StageHyperparams) -> NoiseRealizationEstimate:
    """Noise realizations under the sign-informed structured kernel."""
    hp.require(("lambda_f", "l_f") + STAGE2)
    signs = np.asarray(signs, dtype=float)
    if signs.shape != (len(ts),):
        raise ValueError(f"signs must have length {len(ts)}, got {signs.shape}")
    k_gw = _stage2_kernel(ts, signs, hp)
    c = _kf_plus_sigma(ts, hp) + k_gw
    if hp.mu > 0:
        offset = signs * (hp.mu * hp.beta)
        c_hat = CovarianceModel(c).solve(ts.outputs - offset)
        return NoiseRealizationEstimate(offset + k_gw @ c_hat, "stage2")
    c_hat = CovarianceModel(c).solve(ts.outputs)
    return NoiseRealizationEstimate(k_gw @ c_hat, "stage2")


def stage3_profile(ts: TrainingSet, n_hat, hp: StageHyperparams, ridge: float | None = None) -> SdProfile:
    """Smooth ``|n_hat| / beta`` into an SD profile.

    ``ridge`` overrides ``hp.rho_g`` and may be zero (pure interpolation).
    """
    values = n_hat.values if isinstance(n_hat, NoiseRealizationEstimate) else np.asarray(n_hat, dtype=float)
    if values.shape != (len(ts),):
        raise ValueError(f"noise estimate must have length {len(ts)}, got {values.shape}")
    if ridge is None:
        hp.require(STAGE3)
        ridge = hp.rho_g
    else:
        hp.require(("lambda_g", "l_g"))
    targets = np.abs(values) / hp.beta
    k_g = kernel_from_sqdist(ts.sqdist, GaussianKernelParams(hp.lambda_g, hp.l_g))
    k_g[np.diag_indices_from(k_g)] += ridge
    weights = CovarianceModel(k_g).solve(targets)
    return SdProfile(weights, ts.inputs, hp.lambda_g, hp.l_g, ts.dt, ts.kind)


def noise_strength_diagnostic(rho_n: float, sigma_e) -> float:
    """``sqrt(rho_e) / sqrt(rho_n)`` with ``rho_e`` the mean output-noise variance."""
    if not rho_n > 0:
        raise ValueError(f"rho_n must be positive, got {rho_n}")
    rho_e = float(np.mean(np.asarray(sigma_e, dtype=float)))
    return float(np.sqrt(rho_e / rho_n))


# ---------------------------------------------------------------------------
# evidence optimization


def _default_bounds(ts: TrainingSet, targets: np.ndarray, rho_n: float | None = None) -> dict[str, tuple[float, float]]:
    vz = float(np.var(ts.outputs)) or 1.0
    vt = float(np.var(targets)) if targets is not None else vz
    vt = vt or 1.0
    ell = ts.median_sqdist
    ref_w = rho_n if rho_n is not None else vz
    return {
        "lambda_f": (1e-4 * vz, 1e4 * vz),
        "l_f": (1e-2 * ell, 1e2 * ell),
        "rho_n": (1e-6 * vz, 1e1 * vz),
        "lambda_w": (1e-3 * ref_w, 1e3 * ref_w),
        "l_w": (1e-2 * ell, 1e2 * ell),
        "lambda_g": (1e-4 * vt, 1e4 * vt),
        "l_g": (1e-2 * ell, 1e2 * ell),
        "rho_g": (1e-6 * vt, 1e1 * vt),
    }


def _optimize(names, objective, config: TrineConfig, defaults, bounds=None) -> EvidenceOptimum:
    """Maximize over the non-fixed subset of ``names``."""
    bounds = config.bounds if bounds is None else bounds
    free = [n for n in names if n not in config.fixed]
    pinned = {n: float(config.fixed[n]) for n in names if n in config.fixed}

    def full(free_values) -> dict[str, float]:
        out = dict(pinned)
        out.update(zip(free, map(float, free_values)))
        return out

    if not free:
        p = full(())
        return EvidenceOptimum(tuple(names), tuple(p[n] for n in names), float(objective(p)), 1)
    box = HyperparamBox(
        tuple(free),
        tuple(bounds.get(n, defaults[n])[0] for n in free),
        tuple(bounds.get(n, defaults[n])[1] for n in free),
        config.grid_points,
    )
    opt = maximize_evidence(lambda v: objective(full(v)), box, max_refine=config.max_refine)
    p = full(opt.params)
    return EvidenceOptimum(tuple(names), tuple(p[n] for n in names), opt.value, opt.evaluations)


def fit_stage1(ts: TrainingSet, config: TrineConfig = TrineConfig()) -> Stage1Fit:
    """Evidence-optimize ``(lambda_f, l_f, rho_n)`` and compute the sign vector."""
    z = ts.outputs
    defaults = _default_bounds(ts, None)

    def objective(p):
        return log_evidence(_stage1_matrix(ts, p["lambda_f"], p["l_f"], p["rho_n"]), z)

    try:
        opt = _optimize(STAGE1, objective, config, defaults)
        hp = StageHyperparams(**opt.as_dict(), beta=config.beta)
        signs, noise, _ = stage1_signs(ts, hp)
    except Exception as exc:  # noqa: BLE001 - re-raised with stage identity
        raise StageError("stage1", exc) from exc
    logger.debug("stage1 %s evidence=%.6g (%d evals)", opt.as_dict(), opt.value, opt.evaluations)
    return Stage1Fit(signs, noise, hp, opt.value, opt.evaluations)


def fit_stage2(ts: TrainingSet, s1: Stage1Fit, config: TrineConfig = TrineConfig()) -> tuple[NoiseRealizationEstimate, StageHyperparams, float]:
    """Evidence-optimize ``(lambda_w, l_w)`` with stage-1 ``(lambda_f, l_f)`` held."""
    hp1 = s1.hyperparams
    mu = float(np.mean(np.abs(s1.noise.values)) / config.beta) if config.mean_term else 0.0
    base = _kf_plus_sigma(ts, hp1)
    signs = s1.signs
    offset = signs * (mu * config.beta) if mu > 0 else None
    defaults = _default_bounds(ts, None, rho_n=hp1.rho_n)
    b2 = config.beta**2
    outer = signs[:, None] * signs[None, :]
    diag_extra = mu**2 * (1.0 - b2)

    def objective(p):
        g = kernel_from_sqdist(ts.sqdist, GaussianKernelParams(p["lambda_w"], p["l_w"]))
        c = g * outer
        c *= b2
        c[np.diag_indices_from(c)] = np.diagonal(g) + diag_extra
        c += base
        return log_evidence(c, ts.outputs, offset)

    try:
        opt = _optimize(STAGE2, objective, config, defaults)
        hp = replace(hp1, **opt.as_dict(), mu=mu)
        noise = stage2_noise(ts, signs, hp)
    except Exception as exc:  # noqa: BLE001
        raise StageError("stage2", exc) from exc
    logger.debug("stage2 %s evidence=%.6g (%d evals)", opt.as_dict(), opt.value, opt.evaluations)
    return noise, hp, opt.value


def _optimize_stage3_profiled(ts: TrainingSet, targets: np.ndarray, config: TrineConfig, defaults) -> EvidenceOptimum:
    """Stage-3 evidence with the amplitude maximized in closed form.

    With ``C = lambda_g (K0 + tau I)`` and ``tau = rho_g / lambda_g`` the
    evidence is maximized over ``lambda_g`` at ``t^T (K0 + tau I)^{-1} t / m``
    (clipped to its bounds), leaving a 2-D search over ``(l_g, tau)``.
    """
    m = targets.shape[0]
    lam_lo, lam_hi = config.bounds.get("lambda_g", defaults["lambda_g"])
    rho_lo, rho_hi = config.bounds.get("rho_g", defaults["rho_g"])
    bounds = dict(config.bounds)
    bounds["tau"] = (rho_lo / lam_hi, rho_hi / lam_lo)
    defaults = dict(defaults, tau=bounds["tau"])

    def profiled(l_g, tau):
        a = kernel_from_sqdist(ts.sqdist, GaussianKernelParams(1.0, l_g))
        a[np.diag_indices_from(a)] += tau
        model = CovarianceModel(a)
        q = float(targets @ model.solve(targets))
        lam = min(max(q / m, lam_lo), lam_hi)
        value = -0.5 * q / lam - 0.5 * (m * np.log(lam) + model.logdet()) - 0.5 * m * LOG_2PI
        return value, lam

    names = ("l_g", "tau")
    opt = _optimize(names, lambda p: profiled(p["l_g"], p["tau"])[0], config, defaults, bounds)
    l_g, tau = opt.params
    value, lam = profiled(l_g, tau)
    return EvidenceOptimum(STAGE3, (lam, l_g, lam * tau), value, opt.evaluations + 1)


def fit_stage3(ts: TrainingSet, noise, hp: StageHyperparams, config: TrineConfig = TrineConfig()) -> tuple[SdProfile, StageHyperparams, float]:
    """Evidence-optimize ``(lambda_g, l_g, rho_g)`` on targets ``|n_hat| / beta``."""
    values = noise.values if isinstance(noise, NoiseRealizationEstimate) else np.asarray(noise, dtype=float)
    targets = np.abs(values) / config.beta
    defaults = _default_bounds(ts, targets)

    def objective(p):
        c = kernel_from_sqdist(ts.sqdist, GaussianKernelParams(p["lambda_g"], p["l_g"]))
        c[np.diag_indices_from(c)] += p["rho_g"]
        return log_evidence(c, targets)

    try:
        if not np.any(targets):
            # Identically zero targets: the profile is zero for any kernel.
            p = {n: config.fixed.get(n, float(np.sqrt(np.prod(defaults[n])))) for n in STAGE3}
            opt = EvidenceOptimum(STAGE3, tuple(p[n] for n in STAGE3), float("nan"), 0)
        elif "lambda_g" in config.fixed or "rho_g" in config.fixed:
            opt = _optimize(STAGE3, objective, config, defaults)
        else:
            opt = _optimize_stage3_profiled(ts, targets, config, defaults)
        hp3 = replace(hp, **opt.as_dict(), beta=config.beta)
        profile = stage3_profile(ts, values, hp3)
    except Exception as exc:  # noqa: BLE001
        raise StageError("stage3", exc) from exc
    logger.debug("stage3 %s evidence=%.6g (%d evals)", opt.as_dict(), opt.value, opt.evaluations)
    return profile, hp3, opt.value


# ---------------------------------------------------------------------------
# pipelines


def run_trine(ts: TrainingSet, config: TrineConfig = TrineConfig(), stage1: Stage1Fit | None = None) -> TrineResult:
    """Full three-stage pipeline.  A precomputed ``stage1`` fit may be reused."""
    s1 = stage1 if stage1 is not None else fit_stage1(ts, config)
    noise, hp2, ev2 = fit_stage2(ts, s1, config)
    profile, hp3, ev3 = fit_stage3(ts, noise, hp2, config)
    return TrineResult(
        profile=profile,
        signs=s1.signs,
        noise=noise,
        hyperparams=hp3,
        evidence={"stage1": s1.evidence, "stage2": ev2, "stage3": ev3},
        stage1_noise=s1.noise,
    )


def run_trine_unstructured(ts: TrainingSet, config: TrineConfig = TrineConfig(), stage1: Stage1Fit | None = None) -> TrineResult:
    """Stage 3 applied directly to the stage-1 noise estimate (no structured kernel)."""
    s1 = stage1 if stage1 is not None else fit_stage1(ts, config)
    profile, hp3, ev3 = fit_stage3(ts, s1.noise, s1.hyperparams, config)
    return TrineResult(
        profile=profile,
        signs=s1.signs,
        noise=s1.noise,
        hyperparams=hp3,
        evidence={"stage1": s1.evidence, "stage3": ev3},
        stage1_noise=s1.noise,
    )


def run_oracle(ts: TrainingSet, true_noise=None, config: TrineConfig = TrineConfig()) -> TrineResult:
    """Stage 3 applied to the recorded intrinsic increments."""
    if true_noise is None:
        true_noise = ts.true_noise
    if true_noise is None:
        raise ValueError("the oracle needs recorded intrinsic noise increments")
    noise = NoiseRealizationEstimate(np.asarray(true_noise, dtype=float), "oracle")
    profile, hp3, ev3 = fit_stage3(ts, noise, StageHyperparams(beta=config.beta), config)
    return TrineResult(profile=profile, signs=None, noise=noise, hyperparams=hp3, evidence={"stage3": ev3})
