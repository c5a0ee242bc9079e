"""A small Monte Carlo comparison with binning by noise ratio.

The full benchmark uses 100 runs per system; five runs are enough to see
the harness at work.  Every run draws a fresh noise ratio, applies all
estimators to the same dataset and records one FitResult per estimator.
"""

from trine.benchmark import bin_by_ratio, run_monte_carlo, summarize
from trine.simulators import default_scenario

scen = default_scenario("ricker", n_points=300, ratio_range=(0.0, 1.0))
outcome = run_monte_carlo(scen, runs=5, base_seed=42)

for row in summarize(outcome.results):
    print(f"{row.estimator:8s} mean Fit {row.mean:6.2f}  sd {row.std:5.2f}  (n={row.count})")

table = bin_by_ratio(outcome.results, edges=(0.0, 0.5, 1.0))
for row in table.rows:
    means = ", ".join(f"{e} {row.means[e]:.1f}" if row.means[e] is not None else f"{e} -" for e in table.estimators)
    print(f"ratio [{row.lower}, {row.upper}]: {row.counts['trine']} run(s); {means}")
