import math

import numpy as np
import pytest
from scipy import stats

from conftest import ks_critical, ks_statistic, rejection_eta
from orthant.gaussian import sample_truncated_std_normal
from orthant.moves import (
    BounceCapExceeded,
    ConstraintSystem,
    InfeasibleStateError,
    MoveConfig,
    apply_move,
    block_gibbs_sweep,
    check_feasible,
    conditional_interval,
    gibbs_sweep,
    hmc_step,
    move_until_stable,
    overrelax_alpha,
    overrelax_step,
)
from orthant.problem import Ar1Spec, gen_ar1_problem, gen_cauchy_problem, standardize

INF = math.inf

# a correlated 3-d box with mild truncation, used with exact rejection draws
SIGMA3 = np.array([[1.0, 0.6, 0.3], [0.6, 1.5, -0.4], [0.3, -0.4, 1.2]])
G3 = np.linalg.cholesky(SIGMA3)
A3 = np.array([-0.5, 0.0, -1.0])
B3 = np.array([INF, 1.5, 2.0])


def ghk_points(g, a, b, M, rng):
    """Feasible starting points by sequential truncated draws."""
    t = g.shape[0]
    eta = np.zeros((M, t))
    for i in range(t):
        shift = eta[:, :i] @ g[i, :i]
        eta[:, i] = sample_truncated_std_normal((a[i] - shift) / g[i, i], (b[i] - shift) / g[i, i], rng)
    return eta


def test_conditional_interval_examples():
    cs = ConstraintSystem(np.diag([2.0, 4.0]), np.array([1.0, -2.0]), np.array([3.0, 8.0]))
    assert conditional_interval(cs, 1, np.array([0.7, 0.1])) == (-0.5, 2.0)
    cs = ConstraintSystem(np.array([[1.0, 0.0], [-1.0, 1.0]]), np.zeros(2), np.full(2, INF))
    assert conditional_interval(cs, 0, np.array([1.0, 2.0])) == (0.0, 2.0)


def test_conditional_interval_contains_current(rng):
    p = standardize(gen_cauchy_problem(8, 2))
    eta = ghk_points(p.chol, p.a, p.b, 200, rng)
    cs = ConstraintSystem.from_problem(p)
    for i in range(8):
        lo, hi = conditional_interval(cs, i, eta)
        assert np.all(lo <= eta[:, i]) and np.all(eta[:, i] <= hi)


def test_conditional_interval_infeasible_raises():
    cs = ConstraintSystem(np.eye(2), np.zeros(2), np.full(2, INF))
    with pytest.raises(InfeasibleStateError):
        conditional_interval(cs, 0, np.array([1.0, -3.0]))


def test_gibbs_single_coordinate_regenerates(rng):
    cs = ConstraintSystem(np.array([[2.0]]), np.array([1.0]), np.array([INF]))
    eta = np.full((10**5, 1), 1.0)
    gibbs_sweep(cs, eta, rng)
    cdf = lambda x: (stats.norm.cdf(x) - stats.norm.cdf(0.5)) / stats.norm.sf(0.5)
    assert ks_statistic(eta[:, 0], cdf) < ks_critical(10**5)


def test_gibbs_diagonal_independent_draws(rng):
    cs = ConstraintSystem(np.eye(2), np.array([0.0, -1.0]), np.array([INF, 1.0]))
    eta = np.tile([0.5, 0.2], (10**5, 1))
    gibbs_sweep(cs, eta, rng)
    assert abs(np.corrcoef(eta.T)[0, 1]) < 0.02
    assert abs(eta[:, 0].mean() - math.sqrt(2 / math.pi)) < 4 * 0.6 / math.sqrt(1e5)


def _moments(x):
    cols = [x[:, i] for i in range(3)] + [x[:, i] * x[:, j] for i in range(3) for j in range(i, 3)]
    return np.array([c.mean() for c in cols]), np.array([c.std() for c in cols])


def _kernel(kind):
    if kind == "gibbs":
        return lambda cs, x, r: gibbs_sweep(cs, x, r)
    if kind == "block:2":
        return lambda cs, x, r: block_gibbs_sweep(cs, x, 2, r)
    if kind == "overrelax":
        return lambda cs, x, r: overrelax_step(cs, x, overrelax_alpha("auto", 3), r)
    return lambda cs, x, r: hmc_step(cs, x, r)


@pytest.mark.parametrize("kind", ["gibbs", "overrelax", "hmc", "block:2"])
def test_kernel_invariance_exact_start(kind, rng):
    n = 10**4
    start = rejection_eta(G3, A3, B3, n, rng)
    ref = rejection_eta(G3, A3, B3, 10**5, rng)
    cs = ConstraintSystem(G3, A3, B3)
    x = start.copy()
    step = _kernel(kind)
    for _ in range(5):
        step(cs, x, rng)
        assert np.all(check_feasible(cs, x))
    m_out, s_out = _moments(x)
    m_ref, s_ref = _moments(ref)
    se = np.sqrt(s_out**2 / n + s_ref**2 / ref.shape[0])
    assert np.all(np.abs(m_out - m_ref) <= 4 * se), (kind, (m_out - m_ref) / se)


@pytest.mark.parametrize("kind", ["gibbs", "overrelax", "hmc", "block:3"])
def test_kernel_feasibility_closure(kind, rng):
    p = standardize(gen_cauchy_problem(12, 5))
    cs = ConstraintSystem.from_problem(p)
    x = ghk_points(p.chol, p.a, p.b, 300, rng)
    cfg = MoveConfig.parse(kind, repeat=3)
    apply_move(cs, x, cfg, rng)
    assert np.all(check_feasible(cs, x))


def test_ar1_gibbs_preserves_means(rng):
    p = gen_ar1_problem(Ar1Spec(T=3, rho=0.7, b=2.0))
    start = rejection_eta(p.chol, p.a, p.b, 10**4, rng)
    ref = rejection_eta(p.chol, p.a, p.b, 10**5, rng)
    x = start.copy()
    gibbs_sweep(ConstraintSystem.from_problem(p), x, rng)
    se = np.sqrt(x.var(axis=0) / 1e4 + ref.var(axis=0) / 1e5)
    assert np.all(np.abs(x.mean(axis=0) - ref.mean(axis=0)) <= 4 * se)


def test_block_full_window_equals_gibbs():
    p = standardize(gen_cauchy_problem(6, 1))
    cs = ConstraintSystem.from_problem(p)
    x0 = ghk_points(p.chol, p.a, p.b, 50, np.random.default_rng(0))
    x1, x2 = x0.copy(), x0.copy()
    gibbs_sweep(cs, x1, np.random.default_rng(9))
    block_gibbs_sweep(cs, x2, 10, np.random.default_rng(9))
    np.testing.assert_array_equal(x1, x2)


def test_block_window_one_updates_last_only(rng):
    p = standardize(gen_cauchy_problem(5, 1))
    cs = ConstraintSystem.from_problem(p)
    x0 = ghk_points(p.chol, p.a, p.b, 50, rng)
    x = x0.copy()
    block_gibbs_sweep(cs, x, 1, rng)
    np.testing.assert_array_equal(x[:, :4], x0[:, :4])
    assert np.all(x[:, 4] != x0[:, 4])


def test_overrelax_unconstrained(rng):
    n = 10**5
    cs = ConstraintSystem(np.eye(1), np.array([-INF]), np.array([INF]))
    x = rng.standard_normal((n, 1))
    acc = [overrelax_step(cs, x, 0.9, rng) for _ in range(3)]
    assert acc == [1.0, 1.0, 1.0]
    assert ks_statistic(x[:, 0], stats.norm.cdf) < ks_critical(n)


def test_overrelax_alpha_limit(rng):
    cs = ConstraintSystem(np.eye(2), np.full(2, -INF), np.full(2, INF))
    x0 = rng.standard_normal((100, 2))
    x = x0.copy()
    overrelax_step(cs, x, 1 - 1e-12, rng)
    np.testing.assert_allclose(x, x0, atol=1e-5)


def test_overrelax_alpha_rules():
    assert overrelax_alpha("auto", 8) == pytest.approx(0.75)
    assert overrelax_alpha("small", 8) == pytest.approx(0.002)
    assert overrelax_alpha(0.3, 5) == 0.3
    with pytest.raises(ValueError):
        overrelax_alpha(1.0, 5)


def test_overrelax_rejects_infeasible(rng):
    cs = ConstraintSystem(np.eye(1), np.array([0.0]), np.array([1e-3]))
    x = np.full((1000, 1), 5e-4)
    acc = overrelax_step(cs, x, 0.5, rng)
    assert acc < 0.01
    assert np.all((x >= 0) & (x <= 1e-3))


def test_hmc_half_period_unconstrained(rng):
    cs = ConstraintSystem(np.eye(3), np.full(3, -INF), np.full(3, INF))
    x0 = rng.standard_normal((20, 3))
    x = x0.copy()
    hmc_step(cs, x, rng, horizon=math.pi)
    np.testing.assert_allclose(x, -x0, atol=1e-12)


def test_hmc_energy_conservation(rng):
    cs = ConstraintSystem(G3, A3, B3)
    x = rejection_eta(G3, A3, B3, 2000, rng)
    diag = {}
    hmc_step(cs, x, rng, diagnostics=diag)
    assert diag["max_energy_error"] <= 1e-9
    assert np.sum(diag["bounces"]) > 0
    free = ConstraintSystem(np.eye(2), np.full(2, -INF), np.full(2, INF))
    y = rng.standard_normal((100, 2))
    hmc_step(free, y, rng, horizon=2.3, diagnostics=diag)
    assert diag["max_energy_error"] <= 1e-9


def test_hmc_one_dimensional_wall(rng):
    cs = ConstraintSystem(np.eye(1), np.array([0.0]), np.array([INF]))
    x = np.full((1000, 1), 0.5)
    hmc_step(cs, x, rng)
    assert np.all(x >= 0.0)
    # reflected motion of |.|: the law is the half-normal after many steps
    y = np.abs(rng.standard_normal((10**5, 1)))
    for _ in range(3):
        hmc_step(cs, y, rng)
    assert np.all(y >= 0.0)
    assert ks_statistic(y[:, 0], lambda v: 2 * stats.norm.cdf(v) - 1) < ks_critical(10**5)


def test_hmc_bounce_cap(rng):
    cs = ConstraintSystem(np.eye(1), np.array([0.0]), np.array([1e-6]))
    x = np.full((5, 1), 5e-7)
    with pytest.raises(BounceCapExceeded, match="bounce cap exceeded"):
        hmc_step(cs, x, rng, horizon=1.0, max_bounces=100)


def test_move_until_stable_identity():
    x = np.ones((4, 2))
    assert move_until_stable(x, lambda v: None) == 2


def test_move_until_stable_diagonal_stops_at_minimum(rng):
    cs = ConstraintSystem(np.eye(3), np.zeros(3), np.full(3, INF))
    x = np.abs(rng.standard_normal((20000, 3)))
    rounds = move_until_stable(x, lambda v: gibbs_sweep(cs, v, rng), tol=0.05)
    assert rounds == 2


def test_move_until_stable_cap():
    x = np.zeros((2, 1))
    calls = []

    def step(v):
        calls.append(1)
        v += len(calls) ** 2

    assert move_until_stable(x, step, tol=1e-6, max_rounds=7) == 7


def test_apply_move_stats_on_cauchy(rng):
    p = standardize(gen_cauchy_problem(20, 3))
    cs = ConstraintSystem.from_problem(p)
    x = ghk_points(p.chol, p.a, p.b, 500, rng)
    st = apply_move(cs, x, MoveConfig(), rng)
    assert st["kind"] == "gibbs" and st["t"] == 20 and st["sweeps"] >= 2


def test_move_config_parse():
    assert MoveConfig.parse("none") is None
    assert MoveConfig.parse("block:4").window == 4
    assert MoveConfig.parse("hmc").kind == "hmc"
    assert MoveConfig.parse("block:4").label() == "block:4"
    with pytest.raises(ValueError):
        MoveConfig.parse("walk")
    with pytest.raises(ValueError):
        MoveConfig(kind="block_gibbs", window=0)
