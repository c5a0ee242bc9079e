"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL verdict (printed in the pytest
terminal summary) and then asserts it.  The two Monte Carlo criteria read
their runs from the on-disk cache maintained by ``mc_cache.py`` and compute
any missing runs, which takes hours on a single core.
"""

import time

import numpy as np
import pytest

import mc_cache
from oracles import rel_err, stage1_bruteforce, stage2_bruteforce, stage3_bruteforce
from trine import benchmark as bm
from trine.cli import main
from trine.estimator import (
    CONTINUOUS,
    StageHyperparams,
    TrainingSet,
    _stage2_kernel,
    run_trine,
    stage1_signs,
    stage2_noise,
    stage3_profile,
)
from trine.kernels import BETA, GaussianKernelParams, kernel_matrix, structured_kernel
from trine.simulators import (
    SystemDefinition,
    build_dataset,
    default_scenario,
    euler_maruyama,
    make_system,
    simulate_scenario,
    toggle_parameters,
)
from trine.theory import TheoryParams, are_residual, factorized_are, kalman_empirical_mse, mse_known_signs, mse_ratio, riccati_P

TABLE1 = {
    "ricker": {"oracle": 93.6, "trine": 91.1, "trine_u": 82.2},
    "self_promoter": {"oracle": 88.1, "trine": 87.2, "trine_u": 78.1},
    "toggle": {"oracle": 92.2, "trine": 89.1, "trine_u": 72.6},
    "fhn": {"oracle": 91.6, "trine": 90.3, "trine_u": 79.3},
}


def _random_instance(r):
    n = int(r.integers(2, 31))
    dim = int(r.integers(1, 3))
    x = r.normal(size=(n, dim))
    z = r.normal(size=n)
    se = r.uniform(0.01, 0.5, size=n)
    u = lambda: float(10 ** r.uniform(-1, 1))
    hp = StageHyperparams(
        lambda_f=u(), l_f=u(), rho_n=float(10 ** r.uniform(-2, 0)), lambda_w=u(), l_w=u(),
        lambda_g=u(), l_g=u(), rho_g=float(10 ** r.uniform(-2, 0)),
        beta=float(r.choice(list(BETA.values()))),
    )
    return TrainingSet(x, z, se), hp


def test_criterion_1_closed_forms_match_bruteforce(acceptance):
    r = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_err = worst_kkt = 0.0
    for _ in range(100):
        ts, hp = _random_instance(r)
        z, x = ts.outputs, ts.inputs
        kf = kernel_matrix(x, GaussianKernelParams(hp.lambda_f, hp.l_f))

        s, n1, _ = stage1_signs(ts, hp)
        c1 = n1.values / hp.rho_n
        _, c_ref = stage1_bruteforce(kf, ts.sigma_e + hp.rho_n, z)
        worst_err = max(worst_err, rel_err(c1, c_ref))
        c = kf + np.diag(ts.sigma_e + hp.rho_n)
        worst_kkt = max(worst_kkt, np.linalg.norm(c @ c1 - z) / np.linalg.norm(z))

        n2 = stage2_noise(ts, s, hp)
        kgw = _stage2_kernel(ts, s, hp)
        worst_err = max(worst_err, rel_err(n2.values, stage2_bruteforce(kf, kgw, ts.sigma_e, z)))
        c2 = np.linalg.lstsq(kf + np.diag(ts.sigma_e) + kgw, z, rcond=None)[0]
        worst_kkt = max(worst_kkt, rel_err(n2.values, kgw @ c2))

        prof = stage3_profile(ts, n2, hp)
        t = np.abs(n2.values) / hp.beta
        kg = kernel_matrix(x, GaussianKernelParams(hp.lambda_g, hp.l_g))
        worst_err = max(worst_err, rel_err(prof.values, stage3_bruteforce(kg, hp.rho_g, t)))
        resid = (kg + hp.rho_g * np.eye(len(t))) @ prof.weights - t
        worst_kkt = max(worst_kkt, np.linalg.norm(resid) / max(np.linalg.norm(t), 1e-300))
    elapsed = time.perf_counter() - t0
    ok = worst_err <= 1e-8 and worst_kkt <= 1e-8 and elapsed < 60
    acceptance(1, ok, f"100 instances: max rel err {worst_err:.2e}, max KKT residual {worst_kkt:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_structured_kernel_psd(acceptance):
    r = np.random.default_rng(202)
    worst = np.inf
    for _ in range(200):
        n = int(r.integers(2, 60))
        x = r.normal(size=(n, int(r.integers(1, 3))))
        g = kernel_matrix(x, GaussianKernelParams(float(10 ** r.uniform(-3, 3)), float(10 ** r.uniform(-3, 3))))
        s = np.where(r.random(n) < 0.5, -1.0, 1.0)
        beta = float(r.choice(list(BETA.values())))
        mu = float(r.choice([0.0, r.uniform(0, 2)]))
        k = structured_kernel(g, s, beta, mu)
        worst = min(worst, np.linalg.eigvalsh(k).min() / (np.trace(k) / n))
    ok = worst >= -1e-10
    acceptance(2, ok, f"200 sign patterns: min eigenvalue / (trace/n) = {worst:.2e}")
    assert ok


def test_criterion_3_riccati_theory(acceptance):
    r = np.random.default_rng(303)
    max_are = max_fact = 0.0
    r_ok = True
    for _ in range(1000):
        p = TheoryParams(
            a=float(r.uniform(0, 0.999)),
            gamma2=float(10 ** r.uniform(-2, 2)),
            mu=float(r.uniform(0, 3)),
            beta=float(r.uniform(0.1, 1.0)),
            sigma2=float(10 ** r.uniform(-2, 2)),
        )
        P = riccati_P(p)
        max_are = max(max_are, abs(are_residual(p, P)) / max(P, 1.0))
        max_fact = max(max_fact, abs(factorized_are(p, P)))
        rr = mse_ratio(p)
        r_ok &= (1 - p.beta**2 - 1e-10) < rr <= 1 + 1e-10
    gaps = []
    for mu in (0.0, 1.0):
        for sigma in (1.0, 10.0):
            for a in (0.0, 0.5, 0.9, 0.99):
                p = TheoryParams(a=a, gamma2=1.0, mu=mu, beta=BETA["gaussian"], sigma2=sigma**2)
                rng = np.random.default_rng([int(mu), int(sigma), int(a * 100)])
                emp = kalman_empirical_mse(p, horizon=100_000, replicates=20, rng=rng)
                gaps.append(abs(emp / mse_known_signs(p) - 1))
    ok = max_are <= 1e-10 and max_fact <= 1e-8 and r_ok and max(gaps) < 0.03
    acceptance(3, ok, f"ARE residual {max_are:.1e}, factorized {max_fact:.1e}, r in bounds: {r_ok}, "
                      f"max Kalman gap {100 * max(gaps):.2f}% over 16 settings")
    assert ok


def _means(results):
    return {(s.system, s.estimator): s.mean for s in bm.summarize(results)}


def test_criterion_4_table1_desk_scale(acceptance):
    problems, parts = [], []
    for system, ref in TABLE1.items():
        results, failures = mc_cache.load_or_run(f"table_{system}")
        m = {e: _means(results)[(system, e)] for e in bm.ESTIMATORS}
        parts.append(f"{system} " + "/".join(f"{m[e]:.1f}" for e in bm.ESTIMATORS))
        for e in bm.ESTIMATORS:
            if abs(m[e] - ref[e]) > 6:
                problems.append(f"{system}:{e} {m[e]:.1f} vs {ref[e]}")
        if m["oracle"] < m["trine"] - 2 or m["trine"] < m["trine_u"] - 2:
            problems.append(f"{system}: ordering")
    ok = not problems
    detail = "means oracle/trine/trine_u: " + "; ".join(parts)
    if problems:
        detail += " | out of band: " + ", ".join(problems)
    acceptance(4, ok, detail)
    assert ok


def test_criterion_5_bin_table_trend(acceptance):
    results, _ = mc_cache.load_or_run("bins_toggle")
    table = bm.bin_by_ratio(results, bm.PAPER_BINS)
    trine = table.series("trine")
    unstr = table.series("trine_u")
    problems = []
    if any(v is None for v in trine + unstr):
        problems.append("empty bin")
    else:
        for i in range(len(trine) - 1):
            if trine[i + 1] > trine[i] + 1:
                problems.append(f"trine rises in bin {i + 1}")
        for i, row in enumerate(table.rows):
            if row.upper <= 0.4 and not trine[i] - unstr[i] > 2:
                problems.append(f"trine not ahead in [{row.lower}, {row.upper})")
        if not unstr[-1] - trine[-1] > 2:
            problems.append("trine_u not ahead in [0.6, 1.0]")
    fmt = lambda s: ",".join("-" if v is None else f"{v:.1f}" for v in s)
    ok = not problems
    acceptance(5, ok, f"trine [{fmt(trine)}] trine_u [{fmt(unstr)}]" + (" | " + "; ".join(problems) if problems else ""))
    assert ok


def _fine_identity(system, seed, steps=3000):
    dt = 0.01 if system.kind == CONTINUOUS else 1.0
    x0 = default_scenario(system.name).initial_state()
    path = euler_maruyama(system, x0, dt, steps, np.random.default_rng(seed))
    x = path.states
    for k in range(steps):
        base = x[k] + dt * system.drift(x[k]) if system.kind == CONTINUOUS else system.drift(x[k])
        if not np.array_equal(base + path.increments[k] + path.corrections[k], x[k + 1]):
            return False
    return True


def test_criterion_6_simulator_fidelity(acceptance):
    sigma = 0.5
    ou = SystemDefinition("ou", 1, CONTINUOUS, lambda x: -x, lambda x: np.array([[sigma]]),
                          lambda xs: np.full((len(xs), 1), sigma))
    path = euler_maruyama(ou, [0.0], 0.01, 200_000, np.random.default_rng(606))
    var_err = abs(np.var(path.states[20_000:, 0]) / (sigma**2 / 2) - 1)
    b, kappa = toggle_parameters()
    fhn = simulate_scenario(default_scenario("fhn"), 606)
    n_fhn = sum(t.states.shape[0] for t in fhn.trajectories)
    identity = all(_fine_identity(make_system(s), seed) for s in ("ricker", "fhn", "self_promoter", "toggle") for seed in (1, 2))
    ok = var_err < 0.05 and round(b, 2) == 0.28 and round(kappa, 2) == 2.37 and n_fhn == 2000 \
        and abs(fhn.dt - 0.1) < 1e-15 and identity
    acceptance(6, ok, f"OU variance error {100 * var_err:.2f}%, b={b:.5f}, kappa={kappa:.4f}, "
                      f"FHN {n_fhn} samples at dt={fhn.dt:g}, bookkeeping exact: {identity}")
    assert ok


def test_criterion_7_self_promoter_signature(acceptance):
    scen = default_scenario("self_promoter", ratio_range=(0.3, 0.4))
    bundle = simulate_scenario(scen, 7)
    ts = build_dataset(bundle)
    res = run_trine(ts)
    g_true = bundle.system.true_sd(ts.inputs)[:, 0]
    fit = bm.fit_metric(g_true, res.profile.g(ts.inputs))
    lo, hi = ts.inputs[:, 0].min(), ts.inputs[:, 0].max()
    grid = np.linspace(lo, hi, 401)
    g_hat = res.profile.g(grid[:, None])
    k = int(np.argmax(g_hat))
    interior = 0 < k < len(grid) - 1
    ok = interior and fit >= 75
    # Reported alongside: where the true SD peaks over the same range.
    k_true = int(np.argmax(bundle.system.true_sd(grid[:, None])[:, 0]))
    acceptance(
        7,
        ok,
        f"estimated SD peaks at x={grid[k]:.3g} inside [{lo:.3g}, {hi:.3g}]: {interior}; "
        f"true SD peaks at x={grid[k_true]:.3g}; Fit {fit:.1f}",
    )
    assert ok


def _snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_criterion_8_determinism(acceptance, tmp_path, capsys):
    cases = {}
    cases["simulate"] = ["simulate", "--system", "toggle", "--n", "200", "--seed", "8"]
    main(cases["simulate"] + ["--out", str(tmp_path / "data")])
    data = tmp_path / "data" / "toggle_bundle.csv"
    cases["estimate"] = ["estimate", "--data", str(data), "--seed", "8"]
    cases["benchmark"] = ["benchmark", "--system", "ricker", "--runs", "2", "--points", "100", "--seed", "8"]
    cases["theory"] = ["theory", "--a-grid", "0:0.99:0.01", "--verify", "--horizon", "10000", "--seed", "8"]
    same = {}
    for name, argv in cases.items():
        codes = [main(argv + ["--out", str(tmp_path / f"{name}_{i}")]) for i in range(2)]
        same[name] = codes == [0, 0] and _snapshot(tmp_path / f"{name}_0") == _snapshot(tmp_path / f"{name}_1")
    capsys.readouterr()
    ok = all(same.values())
    acceptance(8, ok, "byte-identical reruns: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok
