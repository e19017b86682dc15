"""Proximal operators, proximal-gradient solvers, and diagnostics."""

import numpy as np
import pytest

from gfomlab.dynamics import run_asymmetric
from gfomlab.erm import (
    ErmProblem,
    default_eta,
    gradient_descent,
    leave_one_out_run,
    logistic_objective_check,
    operator_norm_sq,
    pgd_linear,
    pgd_logistic,
    prox_eval,
    prox_lasso,
    prox_ridge,
    prox_smooth,
    prox_zero,
    sigmoid,
    smoothstep,
    solve_fixed_point,
    squared_loss,
)
from gfomlab.errors import DivergenceError, NumericalError
from gfomlab.programs import build_pgd_linear


def _design(m, n, seed, scale=None):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(m, n)) / np.sqrt(scale if scale else m)


# ---------------------------------------------------------------------------
# proximal operators

def test_prox_closed_forms():
    assert prox_eval(prox_ridge(1.0), 1.0, 2.0) == pytest.approx(1.0)
    assert prox_eval(prox_lasso(1.0), 1.0, 3.0) == pytest.approx(2.0)
    assert prox_eval(prox_lasso(1.0), 1.0, 0.5) == 0.0
    assert prox_eval(prox_lasso(1.0), 1.0, -3.0) == pytest.approx(-2.0)
    assert prox_eval(prox_zero(), 0.7, -1.3) == -1.3


def test_prox_smooth_quartic_has_unit_root():
    # w + w^3 = 2 has the exact root w = 1
    spec = prox_smooth(lambda w: w ** 4 / 4.0, lambda w: w ** 3)
    assert prox_eval(spec, 1.0, 2.0) == pytest.approx(1.0, abs=1e-10)


def test_prox_newton_failure_paths():
    # no root: g(w) = w - x + (1 - w) is constant
    rootless = prox_smooth(lambda w: w, lambda w: 1.0 - w)
    with pytest.raises(NumericalError):
        prox_eval(rootless, 1.0, 3.0)
    # jump at the root: |g| stays bounded away from zero
    jump = prox_smooth(lambda w: np.abs(w), lambda w: 5.0 * np.sign(w))
    with pytest.raises(NumericalError):
        prox_eval(jump, 1.0, 0.1)


@pytest.mark.parametrize("spec", [
    prox_zero(),
    prox_ridge(0.7),
    prox_lasso(0.3),
    prox_smooth(lambda w: w ** 4 / 4.0, lambda w: w ** 3,
                fpp=lambda w: 3.0 * w ** 2),
])
def test_prox_nonexpansive_on_random_pairs(spec):
    rng = np.random.default_rng(1)
    x = rng.normal(scale=3.0, size=10_000)
    y = rng.normal(scale=3.0, size=10_000)
    eta = 0.8
    px = spec.apply(eta, x)
    py = spec.apply(eta, y)
    assert np.all(np.abs(px - py) <= np.abs(x - y) + 1e-9)


@pytest.mark.parametrize("spec,alpha", [
    (prox_ridge(0.6), 0.6),
    (prox_smooth(lambda w: 0.25 * w ** 2 + w ** 4 / 4.0,
                 lambda w: 0.5 * w + w ** 3,
                 alpha=0.5, fpp=lambda w: 0.5 + 3.0 * w ** 2), 0.5),
])
def test_prox_contracts_under_strong_convexity(spec, alpha):
    rng = np.random.default_rng(2)
    x = rng.normal(scale=3.0, size=10_000)
    y = rng.normal(scale=3.0, size=10_000)
    eta = 0.9
    lip = 1.0 / (1.0 + eta * alpha)
    px = spec.apply(eta, x)
    py = spec.apply(eta, y)
    assert np.all(np.abs(px - py) <= lip * np.abs(x - y) + 1e-9)
    assert spec.strong_convexity() == alpha


def test_smoothstep_ramp():
    assert smoothstep(-1.0) == 0.0 and smoothstep(-5.0) == 0.0
    assert smoothstep(1.0) == 1.0 and smoothstep(5.0) == 1.0
    assert smoothstep(0.0) == pytest.approx(0.5)
    x = np.linspace(-1.5, 1.5, 301)
    s = smoothstep(x)
    assert np.all(np.diff(s) >= 0.0)
    assert np.all((s >= 0.0) & (s <= 1.0))


# ---------------------------------------------------------------------------
# proximal gradient, linear model

def test_pgd_zero_design_stays_at_zero():
    problem = ErmProblem(a=np.zeros((4, 3)), prox=prox_lasso(0.5), eta=0.2,
                         y=np.array([1.0, -2.0, 0.5, 0.3]))
    mus = pgd_linear(problem, T=4)
    assert np.all(mus == 0.0)


def test_pgd_first_step_without_regularizer():
    m, n = 8, 5
    a = _design(m, n, seed=3)
    rng = np.random.default_rng(4)
    y = rng.normal(size=m)
    eta = 0.3
    problem = ErmProblem(a=a, prox=prox_zero(), eta=eta, y=y)
    mus = pgd_linear(problem, T=1)
    assert np.allclose(mus[1], eta * a.T @ y, atol=1e-14)


def test_pgd_matches_program_route():
    m, n, T = 30, 30, 5
    a = _design(m, n, seed=5)
    rng = np.random.default_rng(6)
    mu0, xi = rng.normal(size=n), rng.normal(size=m)
    eta, lam = 0.2, 0.4
    prox = prox_ridge(lam)
    problem = ErmProblem(a=a, prox=prox, eta=eta, loss=squared_loss(),
                         mu0=mu0, xi=xi)
    mus = pgd_linear(problem, T)
    prog = build_pgd_linear(squared_loss(), prox, eta, mu0, xi, T=T)
    traj = run_asymmetric(a, prog)
    for t in range(T + 1):
        got = prog.meta["mu_from_v"](traj.v[t])
        assert np.max(np.abs(got - mus[t])) <= 1e-12


def test_pgd_divergence_guard():
    a = _design(20, 10, seed=7)
    problem = ErmProblem(a=a, prox=prox_zero(), eta=1e6,
                         y=np.ones(20))
    with pytest.raises(DivergenceError):
        pgd_linear(problem, T=40)


def test_pgd_mu_start_override():
    m, n = 6, 4
    a = _design(m, n, seed=8)
    y = np.ones(m)
    problem = ErmProblem(a=a, prox=prox_zero(), eta=0.1, y=y)
    start = np.full(n, 2.0)
    mus = pgd_linear(problem, T=1, mu_start=start)
    assert np.array_equal(mus[0], start)
    assert np.allclose(mus[1], start + 0.1 * a.T @ (y - a @ start), atol=1e-14)


def test_objective_monotone_under_small_step():
    m, n, lam = 40, 25, 0.3
    a = _design(m, n, seed=9)
    y = np.random.default_rng(10).normal(size=m)
    eta = 0.9 / operator_norm_sq(a)
    for prox, reg in [
        (prox_ridge(lam), lambda mu: 0.5 * lam * np.sum(mu ** 2)),
        (prox_lasso(lam), lambda mu: lam * np.sum(np.abs(mu))),
    ]:
        problem = ErmProblem(a=a, prox=prox, eta=eta, y=y)
        mus = pgd_linear(problem, T=30)
        obj = [0.5 * np.sum((y - a @ mu) ** 2) + reg(mu) for mu in mus]
        assert np.all(np.diff(obj) <= 1e-10)


def test_iterates_contract_toward_minimizer():
    m, n, lam = 60, 40, 0.5
    a = _design(m, n, seed=11)
    y = np.random.default_rng(12).normal(size=m)
    eta = 1.0 / operator_norm_sq(a)
    problem = ErmProblem(a=a, prox=prox_ridge(lam), eta=eta, y=y)
    hat = np.linalg.solve(a.T @ a + lam * np.eye(n), a.T @ y)
    mus = pgd_linear(problem, T=25)
    dist = np.linalg.norm(mus - hat, axis=1)
    assert np.all(np.diff(dist) <= 1e-12)


# ---------------------------------------------------------------------------
# fixed points

def test_fixed_point_matches_direct_ridge_solve():
    m, n, lam = 70, 50, 0.4
    a = _design(m, n, seed=13)
    y = np.random.default_rng(14).normal(size=m)
    problem = ErmProblem(a=a, prox=prox_ridge(lam), y=y)
    res = solve_fixed_point(problem, tol=1e-12)
    hat = np.linalg.solve(a.T @ a + lam * np.eye(n), a.T @ y)
    assert res.converged
    assert np.max(np.abs(res.mu - hat)) <= 1e-8
    assert res.residual <= 1e-10


def test_fixed_point_zero_target():
    a = _design(10, 6, seed=15)
    problem = ErmProblem(a=a, prox=prox_ridge(0.2), y=np.zeros(10))
    res = solve_fixed_point(problem)
    assert np.all(res.mu == 0.0)
    assert res.converged


def test_fixed_point_lasso_large_penalty_kills_solution():
    m, n = 30, 20
    a = _design(m, n, seed=16)
    y = np.random.default_rng(17).normal(size=m)
    lam = 2.0 * np.max(np.abs(a.T @ y))
    problem = ErmProblem(a=a, prox=prox_lasso(lam), y=y)
    res = solve_fixed_point(problem)
    assert np.all(res.mu == 0.0)
    # first-order condition at zero: the gradient stays inside the
    # subdifferential box of the l1 term
    assert np.max(np.abs(a.T @ y)) <= lam


def test_fixed_point_nonconvergence_reported():
    a = _design(20, 10, seed=18)
    problem = ErmProblem(a=a, prox=prox_ridge(0.01), eta=1e-9,
                         y=np.ones(20))
    res = solve_fixed_point(problem, tol=1e-14, max_T=5)
    assert not res.converged
    assert res.iterations == 5
    assert res.residual > 0.0


# ---------------------------------------------------------------------------
# logistic pieces

def test_logistic_first_step_sign_gradient():
    m, n = 12, 5
    a = _design(m, n, seed=19)
    xi = np.random.default_rng(20).normal(size=m)
    eta = 0.2
    problem = ErmProblem(a=a, prox=prox_zero(), eta=eta, mu0=np.zeros(n), xi=xi)
    mus = pgd_logistic(problem, sigma=0.0, T=1)
    y = np.where(xi >= 0.0, 1.0, -1.0)
    # all scores vanish at mu = 0, so the gradient is -(1/2) A^T y
    assert np.allclose(mus[1], 0.5 * eta * a.T @ y, atol=1e-13)


def test_logistic_zero_design_stays_zero():
    problem = ErmProblem(a=np.zeros((6, 3)), prox=prox_ridge(0.5), eta=0.3,
                         mu0=np.zeros(3), xi=np.ones(6))
    mus = pgd_logistic(problem, sigma=0.5, T=3)
    assert np.all(mus == 0.0)


def test_logistic_steps_shrink_with_strong_convexity():
    m, n = 300, 200
    a = _design(m, n, seed=21)
    rng = np.random.default_rng(22)
    mu0 = rng.normal(size=n) / np.sqrt(n)
    xi = rng.logistic(size=m)
    problem = ErmProblem(a=a, prox=prox_ridge(0.5), mu0=mu0, xi=xi)
    mus = pgd_logistic(problem, sigma=0.1, T=12)
    steps = np.linalg.norm(np.diff(mus, axis=0), axis=1)
    assert np.all(np.diff(steps[1:]) <= 1e-12)


def test_logistic_gradient_equivalence_closed_form_at_zero():
    m, n = 9, 4
    a = _design(m, n, seed=23)
    rng = np.random.default_rng(24)
    mu0 = rng.normal(size=n)
    xi = rng.logistic(size=m)
    direct, equiv = logistic_objective_check(a, mu0, xi, None, np.zeros(n))
    y = np.where(a @ mu0 + xi >= 0.0, 1.0, -1.0)
    want = -0.5 * a.T @ y
    assert np.allclose(direct, want, atol=1e-13)
    assert np.allclose(equiv, want, atol=1e-13)


def test_logistic_gradient_equivalence_single_sample_hand():
    a = np.array([[0.7, -0.3]])
    mu0 = np.array([0.5, 1.0])
    xi = np.array([0.2])
    mu = np.array([0.1, -0.2])
    # margin 0.7*0.5 - 0.3*1.0 + 0.2 = 0.25 > 0 so the label is +1
    score = 0.7 * 0.1 + (-0.3) * (-0.2)
    want = -sigmoid(-score) * a[0]
    direct, equiv = logistic_objective_check(a, mu0, xi, None, mu)
    assert np.allclose(direct, want, atol=1e-14)
    assert np.allclose(equiv, want, atol=1e-14)


def test_logistic_gradient_equivalence_random_instance():
    m = n = 100
    a = _design(m, n, seed=25)
    rng = np.random.default_rng(26)
    mu0 = rng.normal(size=n)
    xi = rng.logistic(size=m)
    mu = rng.normal(size=n)
    fprime = lambda w: 0.3 * w
    direct, equiv = logistic_objective_check(a, mu0, xi, fprime, mu)
    assert np.max(np.abs(direct - equiv)) <= 1e-12


# ---------------------------------------------------------------------------
# leave-one-out

def test_leave_out_zero_column_is_identity():
    m, n = 8, 5
    a = _design(m, n, seed=27)
    a[:, 2] = 0.0
    problem = ErmProblem(a=a, prox=prox_ridge(0.3), eta=0.2,
                         y=np.random.default_rng(28).normal(size=m))
    base = pgd_linear(problem, T=4)
    loo = leave_one_out_run(problem, "predictor", 2, T=4)
    assert np.array_equal(base, loo)


def test_leave_one_predictor_out_hand_instance():
    a = np.array([[0.5, 1.0], [1.5, 2.0]])
    y = np.array([1.0, -1.0])
    eta = 0.1
    problem = ErmProblem(a=a, prox=prox_zero(), eta=eta, y=y)
    loo = leave_one_out_run(problem, "predictor", 1, T=1)
    a_drop = a.copy()
    a_drop[:, 1] = 0.0
    assert np.allclose(loo[1], eta * a_drop.T @ y, atol=1e-15)


def test_leave_one_sample_out_drops_a_row():
    m, n = 7, 4
    a = _design(m, n, seed=29)
    y = np.random.default_rng(30).normal(size=m)
    eta = 0.15
    problem = ErmProblem(a=a, prox=prox_zero(), eta=eta, y=y)
    loo = leave_one_out_run(problem, "sample", 3, T=1)
    keep = np.arange(m) != 3
    assert np.allclose(loo[1], eta * a[keep].T @ y[keep], atol=1e-15)


def test_leave_one_out_influence_is_order_one():
    n = m = 500
    worst = 0.0
    for seed in range(20):
        a = _design(m, n, seed=100 + seed)
        rng = np.random.default_rng(200 + seed)
        problem = ErmProblem(a=a, prox=prox_ridge(0.5), mu0=rng.normal(size=n),
                             xi=rng.normal(size=m))
        base = pgd_linear(problem, T=10)
        loo = leave_one_out_run(problem, "predictor", 0, T=10)
        worst = max(worst, np.linalg.norm(base[10] - loo[10]))
    assert worst <= 3.0


def test_leave_one_out_bad_index():
    problem = ErmProblem(a=np.ones((3, 2)), prox=prox_zero(), eta=0.1,
                         y=np.ones(3))
    with pytest.raises(Exception):
        leave_one_out_run(problem, "predictor", 7, T=1)


# ---------------------------------------------------------------------------
# helpers

def test_operator_norm_estimate():
    a = _design(40, 30, seed=31)
    est = operator_norm_sq(a)
    true = np.linalg.norm(a, 2) ** 2
    assert est <= true * 1.0001
    assert est >= 0.9 * true
    assert default_eta(a) == pytest.approx(0.5 / est)


def test_masked_gradient_descent_steps():
    m, n = 6, 4
    a = _design(m, n, seed=32)
    rng = np.random.default_rng(33)
    y = rng.normal(size=m)
    masks = np.zeros((2, m))
    masks[0, :3] = 1.0
    masks[1, 3:] = 1.0
    eta, lam = 0.2, 0.1
    out = gradient_descent(a, y, squared_loss(), eta, lam, masks, T=2)
    mu1 = eta * a[:3].T @ y[:3]
    resid = y - a @ mu1
    mu2 = mu1 - eta * (-(a[3:].T @ resid[3:]) + lam * mu1)
    assert np.allclose(out[1], mu1, atol=1e-14)
    assert np.allclose(out[2], mu2, atol=1e-14)
