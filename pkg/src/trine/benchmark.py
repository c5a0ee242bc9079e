"""Fit metric, Monte Carlo harness, noise-ratio binning and summary tables."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .estimator import TrineConfig, fit_stage1, run_oracle, run_trine, run_trine_unstructured
from .kernels import beta_for
from .simulators import BenchmarkScenario, build_dataset, simulate_scenario

logger = logging.getLogger(__name__)

ESTIMATORS = ("oracle", "trine", "trine_u")
# Bin edges of the published per-ratio table; the last bin is closed.
PAPER_BINS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0)
MAX_FAILURE_FRACTION = 0.10


class HarnessError(RuntimeError):
    """Too many Monte Carlo runs failed."""


def fit_metric(g_true, g_hat) -> float:
    """``100 (1 - ||g - g_hat|| / ||g||)``; 100 is a perfect reconstruction."""
    g_true = np.asarray(g_true, dtype=float).ravel()
    g_hat = np.asarray(g_hat, dtype=float).ravel()
    if g_true.shape != g_hat.shape:
        raise ValueError(f"length mismatch: {g_true.size} vs {g_hat.size}")
    norm = np.linalg.norm(g_true)
    if norm == 0:
        raise ValueError("fit is undefined when the true SD profile is identically zero")
    return float(100.0 * (1.0 - np.linalg.norm(g_true - g_hat) / norm))


@dataclass(frozen=True)
class FitResult:
    system: str
    estimator: str
    run: int
    seed: int
    ratio: float
    fit: float
    runtime: float = 0.0


@dataclass(frozen=True)
class RunFailure:
    run: int
    seed: int
    error: str


@dataclass
class MonteCarloOutcome:
    scenario: BenchmarkScenario
    base_seed: int
    runs: int
    estimators: tuple[str, ...]
    results: list[FitResult]
    failures: list[RunFailure]

    def seeds(self) -> list[int]:
        return [run_seed(self.base_seed, i) for i in range(self.runs)]


def run_seed(base_seed: int, index: int) -> int:
    """Seed of replicate ``index``: ``base_seed XOR index``."""
    return int(base_seed) ^ int(index)


def _check_estimators(estimators) -> tuple[str, ...]:
    est = tuple(e for e in ESTIMATORS if e in set(estimators))
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown or not est:
        raise ValueError(f"estimators must be a nonempty subset of {ESTIMATORS}, got {sorted(estimators)}")
    return est


def run_single(scenario: BenchmarkScenario, estimators, seed: int, run: int = 0, config: TrineConfig | None = None) -> list[FitResult]:
    """Simulate one dataset and apply every requested estimator to it.

    Trine and its unstructured variant share one stage-1 fit when both are
    requested, so their difference reflects the later stages only.
    """
    estimators = _check_estimators(estimators)
    config = config or TrineConfig()
    config = replace(config, beta=beta_for(scenario.beta_family))
    bundle = simulate_scenario(scenario, seed)
    ratio = bundle.realized_ratio
    ts = build_dataset(bundle, coordinate=scenario.coordinate)
    g_true = bundle.system.true_sd(ts.inputs)[:, scenario.coordinate]

    stage1 = None
    out = []
    for name in estimators:
        t0 = time.perf_counter()
        if name == "oracle":
            res = run_oracle(ts, config=config)
        else:
            if stage1 is None:
                stage1 = fit_stage1(ts, config)
            runner = run_trine if name == "trine" else run_trine_unstructured
            res = runner(ts, config, stage1=stage1)
        fit = fit_metric(g_true, res.profile.g(ts.inputs))
        out.append(FitResult(scenario.system, name, run, seed, ratio, fit, time.perf_counter() - t0))
    return out


def _run_job(args):
    scenario, estimators, seed, run, config = args
    try:
        return run, run_single(scenario, estimators, seed, run, config), None
    except Exception as exc:  # noqa: BLE001 - failures are recorded, not fatal
        return run, None, f"{type(exc).__name__}: {exc}"


def run_monte_carlo(
    scenario: BenchmarkScenario,
    estimators=ESTIMATORS,
    runs: int = 100,
    base_seed: int = 0,
    config: TrineConfig | None = None,
    workers: int = 1,
    progress=None,
) -> MonteCarloOutcome:
    """Repeat ``run_single`` over ``runs`` replicates with seeds ``base_seed ^ i``.

    Failed runs are logged with their seeds and skipped; more than 10 percent
    of failures raises :class:`HarnessError`.  Results are ordered by run
    index and estimator regardless of ``workers``.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    estimators = _check_estimators(estimators)
    jobs = [(scenario, estimators, run_seed(base_seed, i), i, config) for i in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_job, jobs))
    else:
        raw = []
        for job in jobs:
            raw.append(_run_job(job))
            if progress is not None:
                progress(job[3], raw[-1])

    results, failures = [], []
    for run, res, err in sorted(raw, key=lambda r: r[0]):
        if err is None:
            results.extend(res)
        else:
            seed = run_seed(base_seed, run)
            logger.warning("run %d (seed %d) failed: %s", run, seed, err)
            failures.append(RunFailure(run, seed, err))
    if len(failures) > MAX_FAILURE_FRACTION * runs:
        raise HarnessError(f"{len(failures)} of {runs} runs failed; first: {failures[0].error}")
    return MonteCarloOutcome(scenario, base_seed, runs, estimators, results, failures)


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class BinRow:
    lower: float
    upper: float
    counts: dict
    means: dict


@dataclass(frozen=True)
class BinTable:
    edges: tuple[float, ...]
    estimators: tuple[str, ...]
    rows: tuple[BinRow, ...]
    overflow: dict

    def total(self, estimator: str) -> int:
        return sum(r.counts[estimator] for r in self.rows) + self.overflow[estimator]

    def series(self, estimator: str) -> list[float | None]:
        return [r.means[estimator] for r in self.rows]


def bin_index(ratio: float, edges) -> int | None:
    """Index of the half-open bin containing ``ratio`` (last bin closed), else None."""
    n = len(edges) - 1
    if ratio == edges[-1]:
        return n - 1
    i = int(np.searchsorted(edges, ratio, side="right")) - 1
    return i if 0 <= i < n else None


def bin_by_ratio(results, edges=PAPER_BINS, estimators=None) -> BinTable:
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing with at least two entries")
    results = list(results)
    if estimators is None:
        estimators = tuple(e for e in ESTIMATORS if any(r.estimator == e for r in results))
    fits = {e: [[] for _ in edges[:-1]] for e in estimators}
    overflow = {e: 0 for e in estimators}
    for r in results:
        if r.estimator not in fits:
            continue
        i = bin_index(r.ratio, edges)
        if i is None:
            overflow[r.estimator] += 1
        else:
            fits[r.estimator][i].append(r.fit)
    rows = []
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        counts = {e: len(fits[e][i]) for e in estimators}
        means = {e: (_ordered_mean(fits[e][i]) if fits[e][i] else None) for e in estimators}
        rows.append(BinRow(lo, hi, counts, means))
    if any(overflow.values()):
        logger.info("ratios outside all bins: %s", overflow)
    return BinTable(edges, tuple(estimators), tuple(rows), overflow)


def _ordered_mean(values) -> float:
    # Summation in sorted order makes the result independent of input order.
    return float(np.sum(np.sort(np.asarray(values, dtype=float)))) / len(values)


@dataclass(frozen=True)
class SummaryRow:
    system: str
    estimator: str
    count: int
    mean: float
    std: float
    q1: float
    median: float
    q3: float


def summarize(results) -> list[SummaryRow]:
    """Per-system, per-estimator mean, population SD and quartiles of the Fit."""
    results = list(results)
    if not results:
        raise ValueError("nothing to summarize")
    groups: dict[tuple[str, str], list[float]] = {}
    for r in results:
        groups.setdefault((r.system, r.estimator), []).append(r.fit)
    order = {e: i for i, e in enumerate(ESTIMATORS)}
    rows = []
    for system, est in sorted(groups, key=lambda k: (k[0], order.get(k[1], len(order)), k[1])):
        v = np.sort(np.asarray(groups[(system, est)], dtype=float))
        mean = _ordered_mean(v)
        std = float(np.sqrt(_ordered_mean((v - mean) ** 2)))
        q1, med, q3 = (float(q) for q in np.quantile(v, [0.25, 0.5, 0.75]))
        rows.append(SummaryRow(system, est, len(v), mean, std, q1, med, q3))
    return rows


def manifest(outcome: MonteCarloOutcome) -> dict:
    """JSON-serializable record of what was run (no timings, so reruns match)."""
    return {
        "software_version": __version__,
        "scenario": outcome.scenario.to_dict(),
        "base_seed": outcome.base_seed,
        "runs": outcome.runs,
        "estimators": list(outcome.estimators),
        "seeds": outcome.seeds(),
        "failures": [{"run": f.run, "seed": f.seed, "error": f.error} for f in outcome.failures],
    }
