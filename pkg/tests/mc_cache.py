"""Disk cache for the long Monte Carlo acceptance runs.

Results are keyed by the scenario, run count, base seed and a hash of the
estimator/simulator sources, so any change to the numerics invalidates
them.  Runs are appended one per line as they finish, which lets an
interrupted campaign resume.

Run ``python3 tests/mc_cache.py`` to precompute every campaign.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

from trine import benchmark as bm
from trine.simulators import default_scenario

ROOT = Path(__file__).resolve().parents[1]
CACHE_DIR = ROOT / ".mc_cache"
HASHED_SOURCES = ("kernels.py", "gp_solver.py", "estimator.py", "simulators.py", "benchmark.py")

TABLE_RUNS = 100
TABLE_SEED = 1000
BIN_RUNS = 200
BIN_SEED = 5000


def campaigns() -> dict:
    """Name -> (scenario, runs, base seed) for every cached campaign."""
    out = {}
    for system in ("ricker", "self_promoter", "toggle", "fhn"):
        scen = default_scenario(system, n_points=1000, ratio_range=(0.0, 0.4))
        out[f"table_{system}"] = (scen, TABLE_RUNS, TABLE_SEED)
    out["bins_toggle"] = (default_scenario("toggle", ratio_range=(0.0, 1.0)), BIN_RUNS, BIN_SEED)
    return out


def source_hash() -> str:
    h = hashlib.sha256()
    pkg = Path(bm.__file__).resolve().parent
    for name in HASHED_SOURCES:
        h.update((pkg / name).read_bytes())
    return h.hexdigest()[:16]


def cache_path(name: str, scenario, runs: int, seed: int) -> Path:
    key = json.dumps([scenario.to_dict(), runs, seed, source_hash()], sort_keys=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    return CACHE_DIR / f"{name}_{digest}.jsonl"


def _read(path: Path) -> dict[int, dict]:
    done = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                done[rec["run"]] = rec
    return done


def load_or_run(name: str, compute: bool = True):
    """Return (results, failures) for a campaign, computing missing runs if allowed.

    Returns None when runs are missing and ``compute`` is false.
    """
    scenario, runs, seed = campaigns()[name]
    path = cache_path(name, scenario, runs, seed)
    done = _read(path)
    missing = [i for i in range(runs) if i not in done]
    if missing and not compute:
        return None
    if missing:
        CACHE_DIR.mkdir(exist_ok=True)
        with path.open("a") as fh:
            for i in missing:
                s = bm.run_seed(seed, i)
                try:
                    res = bm.run_single(scenario, bm.ESTIMATORS, s, i)
                    rec = {"run": i, "results": [r.__dict__ for r in res]}
                except Exception as exc:  # noqa: BLE001 - recorded as a failed run
                    rec = {"run": i, "error": f"{type(exc).__name__}: {exc}"}
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
                done[i] = rec
    results, failures = [], []
    for i in range(runs):
        rec = done[i]
        if "error" in rec:
            failures.append((i, rec["error"]))
        else:
            results.extend(bm.FitResult(**r) for r in rec["results"])
    if len(failures) > bm.MAX_FAILURE_FRACTION * runs:
        raise bm.HarnessError(f"{name}: {len(failures)} of {runs} runs failed")
    return results, failures


if __name__ == "__main__":
    names = sys.argv[1:] or list(campaigns())
    for n in names:
        res, fail = load_or_run(n)
        print(n, "done:", len(res), "results,", len(fail), "failures", flush=True)
