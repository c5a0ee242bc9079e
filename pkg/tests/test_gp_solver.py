import numpy as np
import pytest
from scipy.stats import norm

from trine.gp_solver import (
    LOG_2PI,
    CovarianceModel,
    HyperparamBox,
    NumericalFailure,
    OptimizationFailure,
    log_evidence,
    maximize_evidence,
    solve_regularized,
)
from trine.kernels import GaussianKernelParams, kernel_matrix


def random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


def test_solve_examples(rng):
    z = rng.normal(size=7)
    np.testing.assert_array_equal(solve_regularized(np.eye(7), z), z)
    np.testing.assert_allclose(solve_regularized(2 * np.eye(2), [4.0, 6.0]), [2.0, 3.0], rtol=1e-15)
    c = random_spd(rng, 20)
    z = rng.normal(size=20)
    np.testing.assert_allclose(solve_regularized(c, z), np.linalg.inv(c) @ z, rtol=1e-9)


def test_solve_dimension_mismatch():
    with pytest.raises(ValueError):
        solve_regularized(np.eye(3), np.ones(2))


def test_jitter_rescues_singular_psd_matrix():
    c = np.ones((4, 4))
    model = CovarianceModel(c)
    assert model.jitter > 0
    assert model.jitter <= 1e-12 * 10**6


def test_indefinite_matrix_raises_with_jitter():
    c = np.diag([1.0, -1.0])
    with pytest.raises(NumericalFailure) as info:
        CovarianceModel(c)
    assert info.value.jitter > 0


def test_nonfinite_matrix_raises():
    with pytest.raises(NumericalFailure):
        CovarianceModel(np.array([[np.nan]]))


def test_log_evidence_examples(rng):
    assert log_evidence(np.eye(1), [0.0]) == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)
    assert log_evidence(np.eye(1), [0.0]) == pytest.approx(-0.918938533204673, abs=1e-12)

    z = rng.normal(size=9)
    s2 = 0.37
    assert log_evidence(s2 * np.eye(9), z) == pytest.approx(norm.logpdf(z, scale=np.sqrt(s2)).sum(), rel=1e-10)

    c = random_spd(rng, 6)
    z = rng.normal(size=6)
    quad = z @ np.linalg.solve(c, z)
    _, logdet = np.linalg.slogdet(c)
    expected = -quad / 8 - logdet / 2 - 6 * (np.log(4) / 2 + LOG_2PI / 2)
    assert log_evidence(4 * c, z) == pytest.approx(expected, rel=1e-10)


def test_log_evidence_with_mean(rng):
    c = random_spd(rng, 5)
    z = rng.normal(size=5)
    m = rng.normal(size=5)
    assert log_evidence(c, z, mean=m) == pytest.approx(log_evidence(c, z - m), rel=1e-15)


def test_box_validation_and_grid():
    with pytest.raises(ValueError):
        HyperparamBox(("a",), (1.0,), (0.5,))
    with pytest.raises(ValueError):
        HyperparamBox(("a",), (1.0,), (2.0,), grid_points=1)
    box = HyperparamBox(("a", "b"), (1e-2, 1.0), (1e2, 10.0), grid_points=3)
    g = box.grid()
    assert g.shape == (9, 2)
    np.testing.assert_allclose(g[0], [-2, 0])
    np.testing.assert_allclose(g[-1], [2, 1])


def test_maximize_concave_quadratic():
    box = HyperparamBox(("x",), (1e-3,), (1e3,))
    opt = maximize_evidence(lambda p: -(np.log10(p[0]) - 0.4) ** 2, box)
    assert abs(np.log10(opt.params[0]) - 0.4) < 0.01 * 6


def test_maximize_recovers_center():
    box = HyperparamBox(("x", "y"), (1e-2, 1e-1), (1e2, 1e1))
    opt = maximize_evidence(lambda p: -np.sum(np.log10(p) ** 2), box)
    np.testing.assert_allclose(np.log10(opt.params), [0, 0], atol=0.04)


def test_maximize_constant_objective():
    box = HyperparamBox(("x",), (1.0,), (10.0,))
    opt = maximize_evidence(lambda p: 3.5, box)
    assert opt.value == 3.5
    assert 1.0 <= opt.params[0] <= 10.0


def test_maximize_all_nonfinite():
    box = HyperparamBox(("x",), (1.0,), (10.0,))
    with pytest.raises(OptimizationFailure):
        maximize_evidence(lambda p: np.nan, box)


def test_maximize_skips_failing_points():
    box = HyperparamBox(("x",), (1e-2,), (1e2,))

    def obj(p):
        if p[0] > 1:
            raise NumericalFailure("boom")
        return -np.log10(p[0]) ** 2

    opt = maximize_evidence(obj, box)
    assert opt.params[0] <= 1.0 + 1e-12


def test_stage1_evidence_beats_generating_parameters(rng):
    x = np.sort(rng.uniform(-2, 2, size=60))
    lam, ell, rho = 1.5, 0.3, 0.05
    k = kernel_matrix(x, GaussianKernelParams(lam, ell))
    z = rng.multivariate_normal(np.zeros(60), k + rho * np.eye(60))

    def objective(p):
        return log_evidence(kernel_matrix(x, GaussianKernelParams(p[0], p[1])) + p[2] * np.eye(60), z)

    box = HyperparamBox(("lambda_f", "l_f", "rho_n"), (1e-2, 1e-2, 1e-4), (1e2, 1e2, 1e1))
    opt = maximize_evidence(objective, box)
    assert opt.value >= objective((lam, ell, rho)) - 1e-6
