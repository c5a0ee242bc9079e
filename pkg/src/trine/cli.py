"""Command-line interface: ``trine {simulate,estimate,benchmark,theory}``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 IO failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import benchmark as bm
from . import io
from . import theory
from .estimator import (
    HYPERPARAMS,
    StageError,
    TrineConfig,
    fit_stage1,
    noise_strength_diagnostic,
    run_oracle,
    run_trine,
    run_trine_unstructured,
)
from .gp_solver import NumericalFailure, OptimizationFailure
from .kernels import BETA, beta_for
from .simulators import SimulationDiverged, default_scenario, simulate_scenario

THREADS_ENV = "TRINE_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

logger = logging.getLogger("trine")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument helpers


def parse_seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit value")
    return v


def parse_range(text: str) -> tuple[float, float]:
    """``"0.3"`` -> (0.3, 0.3); ``"0..0.4"`` -> (0.0, 0.4)."""
    try:
        if ".." in text:
            lo, hi = (float(p) for p in text.split(".."))
        else:
            lo = hi = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or lo..hi, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"invalid range {text!r}")
    return lo, hi


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` with ``stop`` included when it lies on the grid."""
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(n)]


def parse_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _number(text: str):
    try:
        v = float(text)
    except ValueError:
        return text
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=parse_seed, default=0, help="base random seed (default 0)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument(
        "--threads", type=int, default=None, help=f"worker processes (default ${THREADS_ENV} or 1)"
    )
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="trine", description="Intrinsic-noise SD estimation with sign-informed kernels.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="simulate a benchmark system")
    s.add_argument("--system", choices=("ricker", "fhn", "self_promoter", "toggle"))
    s.add_argument("--scenario", type=Path, help="scenario JSON (fields of BenchmarkScenario)")
    s.add_argument("--r", type=float, help="Ricker growth rate")
    s.add_argument("--n", "--points", dest="points", type=int, help="total number of samples")
    s.add_argument("--stride", type=int, help="integration steps per sample")
    s.add_argument("--sim-step", type=float, help="integration step")
    s.add_argument("--trajectories", type=int)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--ratio", type=parse_range, help="noise ratio or interval lo..hi")
    s.add_argument("--beta-family", choices=sorted(BETA))
    s.add_argument("--coordinate", type=int)
    s.add_argument("--param", type=parse_assignment, action="append", default=[], help="system parameter name=value")

    e = sub.add_parser("estimate", parents=[common], help="estimate an SD profile from a sample table")
    e.add_argument("--data", type=Path, required=True, help="sample CSV (bundle or trajectory table)")
    e.add_argument("--estimator", choices=bm.ESTIMATORS, default="trine")
    e.add_argument("--coordinate", type=int, default=0)
    e.add_argument("--dt", type=float, help="sampling interval (overrides the sidecar)")
    e.add_argument("--kind", choices=("continuous", "discrete"), help="time domain (overrides the sidecar)")
    e.add_argument("--beta-family", choices=sorted(BETA), default="gaussian")
    e.add_argument("--fix", type=parse_assignment, action="append", default=[], help="fix a hyperparameter name=value")
    e.add_argument("--bounds", type=parse_assignment, action="append", default=[], help="search box name=lo:hi")
    e.add_argument("--mean-term", action="store_true", help="use the mean-offset structured kernel")
    e.add_argument("--grid-points", type=int, default=7)
    e.add_argument("--max-refine", type=int, default=200)

    b = sub.add_parser("benchmark", parents=[common], help="Monte Carlo comparison of the estimators")
    b.add_argument("--system", choices=("ricker", "fhn", "self_promoter", "toggle"))
    b.add_argument("--scenario", type=Path)
    b.add_argument("--runs", type=int, default=100)
    b.add_argument("--ratio", type=parse_range, help="noise-ratio interval lo..hi (default 0..0.4)")
    b.add_argument("--points", type=int, help="samples per run")
    b.add_argument("--bins", default="paper", help="'paper' or comma-separated edges")
    b.add_argument("--estimators", default=",".join(bm.ESTIMATORS))
    b.add_argument("--grid-points", type=int, default=7)
    b.add_argument("--max-refine", type=int, default=200)

    t = sub.add_parser("theory", parents=[common], help="closed-form MSE comparison")
    t.add_argument("--a", type=float, default=0.9, help="AR(1) coefficient for the single report")
    t.add_argument("--gamma", type=float, default=1.0, help="stationary SD of the SD process")
    t.add_argument("--mu", type=float, default=0.0)
    t.add_argument("--sigma", type=float, default=1.0, help="output-noise SD")
    fam = t.add_mutually_exclusive_group()
    fam.add_argument("--beta-family", choices=sorted(BETA), default="gaussian")
    fam.add_argument("--beta", type=float)
    t.add_argument("--a-grid", type=parse_grid, help="start:stop:step")
    t.add_argument("--verify", action="store_true", help="also run the Kalman-filter simulation")
    t.add_argument("--horizon", type=int, default=100_000)
    t.add_argument("--replicates", type=int, default=20)
    return p


# ---------------------------------------------------------------------------
# commands


def _out_dir(args) -> Path:
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {args.out}: {exc}") from exc
    return args.out


def _scenario(args, ratio_default=None):
    if args.scenario is not None:
        scen = io.load_scenario(args.scenario)
    elif args.system is not None:
        scen = default_scenario(args.system)
    else:
        raise UsageError("either --system or --scenario is required")
    over = {}
    params = dict(scen.params)
    if getattr(args, "r", None) is not None:
        if scen.system != "ricker":
            raise UsageError("--r only applies to the ricker system")
        params["r"] = args.r
    for k, v in getattr(args, "param", []):
        params[k] = _number(v)
    if params != scen.params:
        over["params"] = params
    if args.points is not None:
        over["n_points"] = args.points
    for name, field in (("stride", "stride"), ("sim_step", "sim_step"), ("trajectories", "n_trajectories"),
                        ("burn_in", "burn_in"), ("beta_family", "beta_family"), ("coordinate", "coordinate")):
        v = getattr(args, name, None)
        if v is not None:
            over[field] = v
    if args.ratio is not None:
        over["ratio_range"] = args.ratio
    elif ratio_default is not None:
        over["ratio_range"] = ratio_default
    return replace(scen, **over) if over else scen


def cmd_simulate(args) -> int:
    scen = _scenario(args)
    out = _out_dir(args)
    bundle = simulate_scenario(scen, args.seed)
    csv_path, json_path = io.write_bundle(bundle, out / f"{scen.system}_bundle")
    print(f"wrote {csv_path} and {json_path}")
    print(f"realized noise ratio: {bundle.realized_ratio:.4g}")
    return EXIT_OK


def _trine_config(args) -> TrineConfig:
    fixed = {}
    for k, v in args.fix:
        if k not in HYPERPARAMS:
            raise UsageError(f"unknown hyperparameter {k!r}; expected one of {', '.join(HYPERPARAMS)}")
        try:
            fixed[k] = float(v)
        except ValueError:
            raise UsageError(f"--fix {k}: not a number: {v!r}") from None
    bounds = {}
    for k, v in args.bounds:
        if k not in HYPERPARAMS:
            raise UsageError(f"unknown hyperparameter {k!r}")
        try:
            lo, hi = (float(p) for p in v.split(":"))
        except ValueError:
            raise UsageError(f"--bounds {k}: expected lo:hi, got {v!r}") from None
        bounds[k] = (lo, hi)
    return TrineConfig(
        beta=beta_for(args.beta_family),
        mean_term=args.mean_term,
        fixed=fixed,
        bounds=bounds,
        grid_points=args.grid_points,
        max_refine=args.max_refine,
    )


def cmd_estimate(args) -> int:
    config = _trine_config(args)
    if not args.data.exists():
        raise FileNotFoundError(f"dataset not found: {args.data}")
    try:
        ts, meta = io.load_dataset(args.data, args.coordinate, args.dt, args.kind)
    except (ValueError, KeyError) as exc:
        raise io_error(f"cannot parse {args.data}: {exc}") from exc
    out = _out_dir(args)

    if args.estimator == "oracle":
        if ts.true_noise is None:
            raise UsageError("the oracle needs intrinsic increments (n* columns) in the dataset")
        res = run_oracle(ts, config=config)
    else:
        s1 = fit_stage1(ts, config)
        runner = run_trine if args.estimator == "trine" else run_trine_unstructured
        res = runner(ts, config, stage1=s1)

    hp = res.hyperparams.as_dict()
    rho_n = hp.get("rho_n")
    diag = noise_strength_diagnostic(rho_n, ts.sigma_e) if rho_n else None
    io.write_profile(res.profile, out / "profile")
    record = {
        "estimator": args.estimator,
        "seed": args.seed,
        "coordinate": args.coordinate,
        "hyperparams": hp,
        "fixed": dict(config.fixed),
        "log_evidence": res.evidence,
        "noise_strength_diagnostic": diag,
        "software_version": __version__,
    }
    io.write_json(out / "hyperparams.json", record)
    if res.signs is not None:
        io.write_csv(out / "signs.csv", ["pair", "sign"], [[k, int(s)] for k, s in enumerate(res.signs)])
    if args.estimator == "trine":
        io.write_csv(
            out / "noise.csv",
            ["pair", "stage1", "stage2"],
            [[k, a, b] for k, (a, b) in enumerate(zip(res.stage1_noise.values, res.noise.values))],
        )
    elif args.estimator == "trine_u":
        io.write_csv(out / "noise.csv", ["pair", "stage1"], [[k, a] for k, a in enumerate(res.noise.values)])

    print(f"estimator: {args.estimator}; wrote results to {out}")
    if diag is not None:
        print(f"noise strength diagnostic sqrt(rho_e)/sqrt(rho_n): {diag:.4g}")
    system = io.system_from_sidecar(meta)
    if system is not None and ts.true_noise is not None:
        g_true = system.true_sd(ts.inputs)[:, args.coordinate]
        fit = bm.fit_metric(g_true, res.profile.g(ts.inputs))
        print(f"Fit: {fit:.4g}")
    return EXIT_OK


def io_error(msg: str) -> OSError:
    return OSError(msg)


def _bin_edges(text: str):
    if text == "paper":
        return bm.PAPER_BINS
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--bins must be 'paper' or comma-separated numbers, got {text!r}") from None


def cmd_benchmark(args) -> int:
    scen = _scenario(args)
    estimators = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    if set(estimators) - set(bm.ESTIMATORS):
        raise UsageError(f"--estimators must be drawn from {', '.join(bm.ESTIMATORS)}")
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    edges = _bin_edges(args.bins)
    config = TrineConfig(grid_points=args.grid_points, max_refine=args.max_refine)
    workers = args.threads if args.threads is not None else default_threads()
    out = _out_dir(args)

    outcome = bm.run_monte_carlo(scen, estimators, args.runs, args.seed, config, workers=workers)
    io.write_csv(
        out / "results.csv",
        ["system", "estimator", "run", "seed", "ratio", "fit"],
        [[r.system, r.estimator, r.run, r.seed, r.ratio, r.fit] for r in outcome.results],
    )
    io.write_json(out / "manifest.json", bm.manifest(outcome))

    header = ["system", "estimator", "count", "mean", "std", "q1", "median", "q3"]
    rows = [[s.system, s.estimator, s.count, s.mean, s.std, s.q1, s.median, s.q3] for s in bm.summarize(outcome.results)]
    io.write_csv(out / "summary.csv", header, rows)
    text = io.write_text_table(out / "summary.txt", header, rows)

    table = bm.bin_by_ratio(outcome.results, edges, outcome.estimators)
    bheader = ["lower", "upper"] + [f"{e}_{k}" for e in table.estimators for k in ("count", "mean")]
    brows = [[r.lower, r.upper] + [v for e in table.estimators for v in (r.counts[e], r.means[e])] for r in table.rows]
    io.write_csv(out / "bins.csv", bheader, brows)
    btext = io.write_text_table(out / "bins.txt", bheader, brows)
    # Per-bin mean Fit series, one column per estimator, for plotting.
    io.write_csv(
        out / "fig_bins.csv",
        ["bin_center"] + list(table.estimators),
        [[(r.lower + r.upper) / 2] + [r.means[e] for e in table.estimators] for r in table.rows],
    )
    print(text, end="")
    print(btext, end="")
    if any(table.overflow.values()):
        print(f"runs outside all bins: {table.overflow}")
    if outcome.failures:
        print(f"{len(outcome.failures)} run(s) failed; see manifest.json")
    return EXIT_OK


def cmd_theory(args) -> int:
    beta = beta_for(args.beta if args.beta is not None else args.beta_family)
    base = theory.TheoryParams(a=args.a, gamma2=args.gamma**2, mu=args.mu, beta=beta, sigma2=args.sigma**2)
    out = _out_dir(args)
    rep = theory.mse_report(base)
    header = ["a", "mse1", "P", "mse2", "r"]
    row = [base.a, rep.mse1, rep.P, rep.mse2, rep.r]
    gap = None
    if args.verify:
        if args.horizon < 10_000:
            raise UsageError("--horizon must be at least 10000")
        emp = theory.kalman_empirical_mse(base, args.horizon, args.replicates, np.random.default_rng(args.seed))
        header.append("empirical_mse2")
        row.append(emp)
        gap = abs(emp - rep.mse2) / rep.mse2 if rep.mse2 > 0 else abs(emp)
    io.write_csv(out / "mse_report.csv", header, [row])
    print(f"a={base.a:.4g}: mse1={rep.mse1:.4g} P={rep.P:.4g} mse2={rep.mse2:.4g} r={rep.r:.4g}")
    if gap is not None:
        print(f"Kalman simulation relative gap: {gap:.4g}")
    if args.a_grid:
        if any(not 0 <= a < 1 for a in args.a_grid):
            raise UsageError("--a-grid values must lie in [0, 1)")
        rows = theory.r_curve(base, args.a_grid)
        io.write_csv(out / "r_curve.csv", ["a", "mse1", "P", "mse2", "r"],
                     [[r["a"], r["mse1"], r["P"], r["mse2"], r["r"]] for r in rows])
        rs = [r["r"] for r in rows]
        print(f"r curve: {len(rows)} points, r({rows[0]['a']:.4g})={rs[0]:.4g}, min r={min(rs):.4g}, "
              f"bound 1-beta^2={1 - beta**2:.4g}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "benchmark": cmd_benchmark, "theory": cmd_theory}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"trine: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, OptimizationFailure, StageError, SimulationDiverged, bm.HarnessError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"trine: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"trine: IO failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"trine: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
