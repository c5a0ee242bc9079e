"""Benchmark systems, Euler-Maruyama simulation and dataset assembly.

Continuous systems follow ``dx = f(x) dt + g(x) dW``; discrete maps follow
``x_{k+1} = f(x_k) + g(x_k) w_k``.  Every simulated path records the noise
increments it applied so that oracles and noise-ratio bookkeeping can use
the exact realizations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .estimator import CONTINUOUS, DISCRETE, TrainingSet


class SimulationDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"simulation produced a non-finite state at step {step}")
        self.step = step


class ModelEvaluationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SystemDefinition:
    """A stochastic system.

    ``drift`` and ``diffusion`` act on a single state of length ``dim``;
    ``diffusion`` returns the (dim, dim) noise factor.  ``true_sd`` maps an
    (m, dim) array of states to the (m, dim) per-coordinate SD
    ``sqrt(diag(g g^T))``.
    """

    name: str
    dim: int
    kind: str
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    true_sd: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    nonnegative: bool = False
    covariance: Callable[[np.ndarray], np.ndarray] | None = None


# ---------------------------------------------------------------------------
# systems


def ricker_system(r: float = 2.5, sd0: float = 0.3, sd1: float = 0.05) -> SystemDefinition:
    """Ricker map with Allee effect and demographic noise.

    ``f(x) = x^2 exp(r (1 - x))`` and ``g(x) = sqrt(sd0^2 + sd1^2 x)``; the
    radicand is clamped at zero for negative excursions.
    """

    def drift(x):
        return x * x * np.exp(r * (1.0 - x))

    def sd(x):
        return np.sqrt(np.maximum(sd0**2 + sd1**2 * np.asarray(x, dtype=float), 0.0))

    return SystemDefinition(
        name="ricker",
        dim=1,
        kind=DISCRETE,
        drift=drift,
        diffusion=lambda x: sd(x).reshape(1, 1),
        true_sd=lambda xs: sd(np.asarray(xs, dtype=float).reshape(-1, 1)),
        params={"r": r, "sd0": sd0, "sd1": sd1},
    )


def fhn_system(
    eps: float = 0.08,
    a: float = 0.7,
    b: float = 0.8,
    i_ext: float = 0.5,
    sigma_v: float = 0.1,
    sigma_w: float = 0.05,
    alpha: float = 0.8,
    beta_exp: float = 0.8,
) -> SystemDefinition:
    """FitzHugh-Nagumo model with multiplicative noise ``sigma |state|^exponent``."""
    if alpha < 0 or beta_exp < 0:
        raise ValueError("noise exponents must be nonnegative")

    def drift(x):
        v, w = x[0], x[1]
        return np.array([v - v**3 / 3.0 - w + i_ext, eps * (v + a - b * w)])

    def sd(xs):
        xs = np.asarray(xs, dtype=float).reshape(-1, 2)
        return np.column_stack([sigma_v * np.abs(xs[:, 0]) ** alpha, sigma_w * np.abs(xs[:, 1]) ** beta_exp])

    return SystemDefinition(
        name="fhn",
        dim=2,
        kind=CONTINUOUS,
        drift=drift,
        diffusion=lambda x: np.diag(sd(x)[0]),
        true_sd=sd,
        params=dict(eps=eps, a=a, b=b, i_ext=i_ext, sigma_v=sigma_v, sigma_w=sigma_w, alpha=alpha, beta_exp=beta_exp),
    )


def self_promoter_system(a0: float = 0.05, b: float = 10.0, m0: float = 25.0, kappa: float = 1.0) -> SystemDefinition:
    """Self-activating gene under fast promoter switching (one species)."""
    if min(a0, b, m0, kappa) <= 0:
        raise ValueError("self-promoter parameters must be positive")

    def drift(x):
        x = x[0] if np.ndim(x) else x
        x2 = x * x
        d = b + x2
        corr = 2.0 * x * b * (a0 - 1.0) * (((a0 - 2.0) + x) * x2 + b * (x - a0)) / (kappa * d**4)
        return np.array([(b * a0 + x2) / d - x - corr])

    def variance(x):
        x2 = x * x
        d = b + x2
        return (b * (a0 + x) + x2 * (1.0 + x)) / (m0 * d) + b * x2 * (a0 - 1.0) ** 2 / (kappa * d**3)

    def sd(xs):
        xs = np.asarray(xs, dtype=float).reshape(-1, 1)
        return np.sqrt(np.maximum(variance(xs), 0.0))

    return SystemDefinition(
        name="self_promoter",
        dim=1,
        kind=CONTINUOUS,
        drift=drift,
        diffusion=lambda x: sd(x).reshape(1, 1),
        true_sd=sd,
        params={"a0": a0, "b": b, "m0": m0, "kappa": kappa},
        nonnegative=True,
    )


def toggle_parameters(theta=1e4, alpha_deg=1000.0, beta_coop=50.0, delta=0.75, K=0.01) -> tuple[float, float]:
    """Dimensionless ``(b, kappa)`` from the toggle-switch rate constants."""
    b = beta_coop * theta * delta**2 / alpha_deg**2
    kappa = K * alpha_deg**2 / (theta * delta**3)
    return b, kappa


def _toggle_q(x1, x2, b, kappa, m0):
    s1, s2 = x1 * x1, x2 * x2
    d = b + s1 + s2
    den = kappa * b * d**3
    q1 = ((b + s1) / d + x1) / m0 + s2 * (b * b + 2 * b * s1 + s1 * s2 + s1 * s1) / den
    q2 = ((b + s2) / d + x2) / m0 + s1 * (b * b + 2 * b * s2 + s1 * s2 + s2 * s2) / den
    q12 = s1 * s2 * (2 * b + s1 + s2) / den
    return q1, q2, q12


def _sqrtm_psd2(q1, q2, q12, tol=1e-10):
    """Symmetric square root of the 2x2 PSD matrix [[q1, q12], [q12, q2]]."""
    scale = max(abs(q1), abs(q2), 1.0)
    det = q1 * q2 - q12 * q12
    if q1 < -tol * scale or q2 < -tol * scale or det < -tol * scale * scale:
        raise ModelEvaluationError(f"intrinsic covariance is indefinite: q1={q1}, q2={q2}, q12={q12}")
    s = np.sqrt(max(det, 0.0))
    t = np.sqrt(max(q1 + q2 + 2.0 * s, 0.0))
    if t == 0.0:
        return np.zeros((2, 2))
    return np.array([[q1 + s, q12], [q12, q2 + s]]) / t


def toggle_system(theta=1e4, alpha_deg=1000.0, beta_coop=50.0, delta=0.75, K=0.01, m0=1000.0) -> SystemDefinition:
    """Mutual-repressor toggle switch with state-dependent noise covariance ``Q(x)``.

    The diffusion factor is the symmetric PSD square root of ``Q(x)``.
    """
    b, kappa = toggle_parameters(theta, alpha_deg, beta_coop, delta, K)
    if b <= 0 or kappa <= 0:
        raise ValueError("derived toggle parameters must be positive")

    def drift(x):
        x1, x2 = x[0], x[1]
        s1, s2 = x1 * x1, x2 * x2
        d = b + s1 + s2
        pre = 2.0 * x1 * x2 * (x1 + x2) / (kappa * b * d**4)
        c1 = (x1 - 1.0) * (b + s1) * (2 * b + s1) + x1 * s2 * (3 * b + x1 * (2 * x1 - 1.0)) + x1 * s2 * s2
        c2 = (x2 - 1.0) * (b + s2) * (2 * b + s2) + x2 * s1 * (3 * b + x2 * (2 * x2 - 1.0)) + x2 * s1 * s1
        return np.array([(b + s1) / d - x1 - pre * c1, (b + s2) / d - x2 - pre * c2])

    def covariance(x):
        q1, q2, q12 = _toggle_q(x[0], x[1], b, kappa, m0)
        return np.array([[q1, q12], [q12, q2]])

    def diffusion(x):
        return _sqrtm_psd2(*_toggle_q(float(x[0]), float(x[1]), b, kappa, m0))

    def sd(xs):
        xs = np.asarray(xs, dtype=float).reshape(-1, 2)
        q1, q2, _ = _toggle_q(xs[:, 0], xs[:, 1], b, kappa, m0)
        return np.sqrt(np.maximum(np.column_stack([q1, q2]), 0.0))

    return SystemDefinition(
        name="toggle",
        dim=2,
        kind=CONTINUOUS,
        drift=drift,
        diffusion=diffusion,
        true_sd=sd,
        params=dict(theta=theta, alpha_deg=alpha_deg, beta_coop=beta_coop, delta=delta, K=K, m0=m0, b=b, kappa=kappa),
        nonnegative=True,
        covariance=covariance,
    )


SYSTEMS = {
    "ricker": ricker_system,
    "fhn": fhn_system,
    "self_promoter": self_promoter_system,
    "toggle": toggle_system,
}


def make_system(name: str, **params) -> SystemDefinition:
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; expected one of {sorted(SYSTEMS)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# simulation


def draw_unit_noise(rng: np.random.Generator, shape, family: str = "gaussian") -> np.ndarray:
    """Zero-mean, unit-variance i.i.d. draws."""
    if family == "gaussian":
        return rng.standard_normal(shape)
    if family == "laplacian":
        return rng.laplace(0.0, np.sqrt(0.5), shape)
    if family == "bernoulli":
        return rng.choice(np.array([-1.0, 1.0]), size=shape)
    raise ValueError(f"unknown noise family {family!r}")


@dataclass(eq=False)
class Path:
    """Fine-grid simulation output.

    ``increments[k]`` is the noise applied between ``states[k]`` and
    ``states[k + 1]``; ``corrections[k]`` is the positivity-clamp adjustment
    (zero unless the system is clamped).  For continuous systems
    ``states[k+1] = states[k] + dt f(states[k]) + increments[k] + corrections[k]``.
    """

    states: np.ndarray
    increments: np.ndarray
    corrections: np.ndarray
    dt: float
    kind: str


def euler_maruyama(
    system: SystemDefinition,
    x0,
    dt: float,
    steps: int,
    rng: np.random.Generator,
    noise_family: str = "gaussian",
) -> Path:
    """Simulate ``steps`` Euler-Maruyama steps (or map iterations) from ``x0``.

    Raises
    ------
    SimulationDiverged
        If a state becomes non-finite.
    """
    continuous = system.kind == CONTINUOUS
    if continuous and not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x0, dtype=float).reshape(system.dim).copy()
    states = np.empty((steps + 1, system.dim))
    increments = np.empty((steps, system.dim))
    corrections = np.zeros((steps, system.dim))
    states[0] = x
    w = draw_unit_noise(rng, (steps, system.dim), noise_family)
    sq = np.sqrt(dt) if continuous else 1.0
    for k in range(steps):
        inc = sq * (system.diffusion(x) @ w[k])
        base = x + dt * system.drift(x) if continuous else system.drift(x)
        new = base + inc
        if system.nonnegative:
            clamped = np.maximum(new, 0.0)
            corrections[k] = clamped - new
            new = clamped
        if not np.all(np.isfinite(new)):
            raise SimulationDiverged(k + 1)
        increments[k] = inc
        states[k + 1] = new
        x = new
    return Path(states, increments, corrections, dt if continuous else 1.0, system.kind)


def subsample(path: Path, stride: int = 1, burn_in: int = 0) -> Path:
    """Keep every ``stride``-th state after discarding ``burn_in`` coarse intervals.

    Increments and corrections are summed over each coarse interval.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    start = burn_in * stride
    states = path.states[start::stride]
    n = states.shape[0]
    m = (n - 1) * stride
    inc = path.increments[start : start + m].reshape(n - 1, stride, -1).sum(axis=1)
    cor = path.corrections[start : start + m].reshape(n - 1, stride, -1).sum(axis=1)
    return Path(states, inc, cor, path.dt * stride, path.kind)


@dataclass(eq=False)
class Trajectory:
    """One sampled trajectory with its recorded noise and observations."""

    states: np.ndarray
    increments: np.ndarray
    corrections: np.ndarray
    observations: np.ndarray | None = None
    meas_var: np.ndarray | None = None

    @property
    def measurement_noise(self) -> np.ndarray:
        return self.observations - self.states


@dataclass(eq=False)
class SimulatedBundle:
    system: SystemDefinition
    trajectories: list[Trajectory]
    dt: float
    seed: int | None = None
    target_ratio: float | None = None
    scenario: "BenchmarkScenario | None" = None
    ratio_coordinate: int | None = None

    @property
    def kind(self) -> str:
        return self.system.kind

    @property
    def realized_ratio(self) -> float:
        return noise_ratio(self.trajectories, self.ratio_coordinate)


def noise_ratio(trajectories, coordinate: int | None = None) -> float:
    """``||e|| / ||n||`` over all samples of all trajectories.

    Norms run over every coordinate, or only over ``coordinate`` if given.
    """
    sel = slice(None) if coordinate is None else coordinate
    e2 = sum(float(np.sum((t.observations - t.states)[:, sel] ** 2)) for t in trajectories)
    n2 = sum(float(np.sum(t.increments[:, sel] ** 2)) for t in trajectories)
    if n2 == 0:
        return 0.0 if e2 == 0 else float("inf")
    return float(np.sqrt(e2 / n2))


def add_measurement_noise(
    trajectories, target_ratio, rng: np.random.Generator, coordinate: int | None = None
) -> tuple[list[Trajectory], float]:
    """Add Gaussian noise with SD proportional to ``|x|``, rescaled to hit a noise ratio.

    ``target_ratio`` is a number or an interval ``(lo, hi)`` from which the
    ratio is drawn uniformly.  The raw draw ``|x| * xi`` is rescaled by one
    common factor so that ``||e|| / ||n||`` (measured on ``coordinate``, or
    on all coordinates when None) equals the target.

    Returns the noisy trajectories and the target ratio used.
    """
    if np.ndim(target_ratio) == 0:
        target = float(target_ratio)
    else:
        lo, hi = map(float, target_ratio)
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid ratio interval ({lo}, {hi})")
        target = lo if hi == lo else float(rng.uniform(lo, hi))
    if target < 0:
        raise ValueError("target ratio must be nonnegative")
    sel = slice(None) if coordinate is None else coordinate
    raw = [np.abs(t.states) * rng.standard_normal(t.states.shape) for t in trajectories]
    n_norm = np.sqrt(sum(float(np.sum(t.increments[:, sel] ** 2)) for t in trajectories))
    e_norm = np.sqrt(sum(float(np.sum(r[:, sel] ** 2)) for r in raw))
    if target == 0:
        c = 0.0
    else:
        if n_norm == 0:
            raise ValueError("cannot target a nonzero noise ratio: intrinsic noise norm is zero")
        if e_norm == 0:
            raise ValueError("cannot target a nonzero noise ratio: all states are zero")
        c = target * n_norm / e_norm
    out = []
    for t, r in zip(trajectories, raw):
        out.append(
            Trajectory(
                states=t.states,
                increments=t.increments,
                corrections=t.corrections,
                observations=t.states + c * r,
                meas_var=(c * t.states) ** 2,
            )
        )
    return out, target


def build_dataset(bundle: SimulatedBundle | list[Trajectory], coordinate: int = 0, dt: float | None = None, kind: str | None = None) -> TrainingSet:
    """Pairs ``(y_k, y_{k+1}[coordinate])`` within each trajectory.

    ``sigma_e`` is the measurement variance of the target sample and the
    oracle's ``true_noise`` is the recorded increment between the pair.
    """
    if isinstance(bundle, SimulatedBundle):
        trajectories, dt, kind = bundle.trajectories, bundle.dt, bundle.kind
    else:
        trajectories = list(bundle)
        if dt is None or kind is None:
            raise ValueError("dt and kind are required when passing raw trajectories")
    inputs, outputs, sig, noise, bounds = [], [], [], [], []
    start = 0
    for t in trajectories:
        y = t.states if t.observations is None else t.observations
        if y.shape[0] < 2:
            raise ValueError("every trajectory needs at least 2 samples")
        if not 0 <= coordinate < y.shape[1]:
            raise ValueError(f"coordinate {coordinate} out of range for dimension {y.shape[1]}")
        mv = np.zeros_like(y) if t.meas_var is None else t.meas_var
        bounds.append(start)
        start += y.shape[0] - 1
        inputs.append(y[:-1])
        outputs.append(y[1:, coordinate])
        sig.append(mv[1:, coordinate])
        noise.append(t.increments[:, coordinate])
    return TrainingSet(
        inputs=np.vstack(inputs),
        outputs=np.concatenate(outputs),
        sigma_e=np.concatenate(sig),
        dt=dt,
        kind=kind,
        boundaries=tuple(bounds),
        coordinate=coordinate,
        true_noise=np.concatenate(noise),
    )


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class BenchmarkScenario:
    """Simulation protocol for one benchmark system.

    ``n_points`` is the total number of samples, split evenly over
    ``n_trajectories``; ``burn_in`` counts sampling intervals discarded
    before recording.
    """

    system: str
    params: dict = field(default_factory=dict)
    sim_step: float = 1.0
    stride: int = 1
    n_points: int = 1000
    n_trajectories: int = 1
    ratio_range: tuple[float, float] = (0.0, 0.4)
    beta_family: str = "gaussian"
    x0: tuple[float, ...] | None = None
    burn_in: int = 100
    coordinate: int = 0

    def __post_init__(self):
        if self.stride < 1 or self.n_points < 2 or self.n_trajectories < 1:
            raise ValueError("stride >= 1, n_points >= 2 and n_trajectories >= 1 are required")
        if self.n_points % self.n_trajectories:
            raise ValueError("n_points must divide evenly over trajectories")
        if not self.sim_step > 0:
            raise ValueError("sim_step must be positive")
        lo, hi = self.ratio_range
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid ratio range {self.ratio_range}")
        object.__setattr__(self, "ratio_range", (float(lo), float(hi)))
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    @property
    def sampling_interval(self) -> float:
        return self.sim_step * self.stride

    @property
    def points_per_trajectory(self) -> int:
        return self.n_points // self.n_trajectories

    def build_system(self) -> SystemDefinition:
        return make_system(self.system, **self.params)

    def initial_state(self) -> np.ndarray:
        if self.x0 is not None:
            return np.array(self.x0)
        return np.array(DEFAULT_X0[self.system], dtype=float)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratio_range"] = list(self.ratio_range)
        d["x0"] = None if self.x0 is None else list(self.x0)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkScenario":
        d = dict(d)
        if "ratio_range" in d:
            d["ratio_range"] = tuple(d["ratio_range"])
        if d.get("x0") is not None:
            d["x0"] = tuple(d["x0"])
        return cls(**d)


DEFAULT_X0 = {
    "ricker": (1.0,),
    "fhn": (0.0, 0.0),
    "self_promoter": (0.05,),
    "toggle": (1.0, 0.1),
}


def default_scenario(system: str, **overrides) -> BenchmarkScenario:
    """Published simulation setup of each benchmark system."""
    base = {
        "ricker": dict(system="ricker", params={"r": 2.5}, sim_step=1.0, stride=1, n_points=1000, n_trajectories=1),
        "fhn": dict(system="fhn", sim_step=0.01, stride=10, n_points=2000, n_trajectories=1),
        "self_promoter": dict(system="self_promoter", sim_step=0.01, stride=1, n_points=1000, n_trajectories=4),
        "toggle": dict(system="toggle", sim_step=0.01, stride=1, n_points=1000, n_trajectories=4),
    }
    try:
        kw = dict(base[system])
    except KeyError:
        raise ValueError(f"unknown system {system!r}; expected one of {sorted(base)}") from None
    kw.update(overrides)
    return BenchmarkScenario(**kw)


def simulate_scenario(scenario: BenchmarkScenario, seed: int, target_ratio=None) -> SimulatedBundle:
    """Simulate all trajectories of a scenario and add measurement noise.

    The seed fans out into independent streams (one per trajectory plus one
    for measurement noise), so the intrinsic-noise paths do not depend on
    the requested ratio.
    """
    system = scenario.build_system()
    streams = np.random.SeedSequence(seed).spawn(scenario.n_trajectories + 1)
    x0 = scenario.initial_state()
    dt = scenario.sim_step if system.kind == CONTINUOUS else 1.0
    npt = scenario.points_per_trajectory
    steps = (npt - 1 + scenario.burn_in) * scenario.stride
    trajectories = []
    for child in streams[:-1]:
        path = euler_maruyama(system, x0, dt, steps, np.random.default_rng(child), scenario.beta_family)
        coarse = subsample(path, scenario.stride, scenario.burn_in)
        trajectories.append(Trajectory(coarse.states, coarse.increments, coarse.corrections))
    ratio = scenario.ratio_range if target_ratio is None else target_ratio
    noisy, target = add_measurement_noise(
        trajectories, ratio, np.random.default_rng(streams[-1]), scenario.coordinate
    )
    return SimulatedBundle(
        system=system,
        trajectories=noisy,
        dt=dt * scenario.stride,
        seed=seed,
        target_ratio=target,
        scenario=scenario,
        ratio_coordinate=scenario.coordinate,
    )
