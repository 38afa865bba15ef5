import csv
import math

import numpy as np
import pytest
from scipy import stats

import orthant.expectations as ex
from conftest import rejection_eta
from orthant.estimators import DeadSystemError, RunConfig, WeightedSample, smc
from orthant.expectations import (
    autocorrelation,
    gibbs_truncated_sampler,
    to_original,
    weighted_expectation,
    write_samples_csv,
)
from orthant.problem import OrthantProblem, gen_cauchy_problem
from orthant.student import StudentOrthantProblem, smc_student

INF = math.inf
HALF_NORMAL_MEAN = math.sqrt(2 / math.pi)
SIGMA3 = np.array([[1.0, 0.6, 0.3], [0.6, 1.5, -0.4], [0.3, -0.4, 1.2]])
A3 = np.array([-0.5, 0.0, -1.0])
B3 = np.array([INF, 1.5, 2.0])


def truncnorm_mean(a, b):
    return stats.truncnorm.mean(a, b)


def test_constant_function_is_exactly_one():
    rep = smc(gen_cauchy_problem(6, 1), RunConfig(M=500, seed=2))
    assert weighted_expectation(rep.sample, lambda x: np.ones(x.shape[0])) == 1.0


def test_half_line_mean():
    p = OrthantProblem([0.0], [INF], [[1.0]])
    rep = smc(p, RunConfig(M=10**5, seed=3))
    m = weighted_expectation(rep.sample)[0]
    se = rep.sample.paths[:, 0].std() / math.sqrt(1e5)
    assert abs(m - HALF_NORMAL_MEAN) <= 3 * se


def test_independent_coordinates():
    a, b = np.array([0.0, -1.0]), np.array([INF, 0.5])
    p = OrthantProblem(a, b, np.eye(2))
    rep = smc(p, RunConfig(M=10**5, seed=4))
    m = weighted_expectation(rep.sample)
    se = rep.sample.paths.std(axis=0) / math.sqrt(1e5)
    assert np.all(np.abs(m - truncnorm_mean(a, b)) <= 3 * se)


def test_convex_hull_property(rng):
    rep = smc(gen_cauchy_problem(8, 5), RunConfig(M=300, seed=5))
    s = rep.sample
    m = weighted_expectation(s)
    assert np.all(m >= s.paths.min(axis=0) - 1e-12) and np.all(m <= s.paths.max(axis=0) + 1e-12)
    # random weights on the same particles
    lw = rng.normal(size=300)
    m2 = weighted_expectation(WeightedSample(s.paths, lw, s.problem))
    w = np.exp(lw - lw.max())
    np.testing.assert_allclose(m2, (w / w.sum()) @ s.paths, rtol=1e-12)


def test_dead_sample_raises():
    s = WeightedSample(np.zeros((3, 1)), np.full(3, -INF), OrthantProblem([0.0], [INF], [[1.0]]))
    with pytest.raises(DeadSystemError):
        weighted_expectation(s)


def test_smc_box_mean_against_rejection(rng):
    # [DERIVED] exact rejection draws are the oracle for the truncated law
    ref = rejection_eta(np.linalg.cholesky(SIGMA3), A3, B3, 10**5, rng) @ np.linalg.cholesky(SIGMA3).T
    p = OrthantProblem(A3, B3, SIGMA3)
    vals = np.array([to_original(rep.sample).T @ rep.sample.weights for rep in
                     (smc(p, RunConfig(M=5000, seed=s)) for s in range(10))])
    se = np.sqrt(vals.var(axis=0, ddof=1) / 10 + ref.var(axis=0) / 1e5)
    assert np.all(np.abs(vals.mean(axis=0) - ref.mean(axis=0)) <= 4 * se)


def test_to_original_undoes_ordering(rng):
    a = np.array([-2.0, 1.5, -0.5])
    p = OrthantProblem(a, np.full(3, INF), SIGMA3)
    ref = rejection_eta(np.linalg.cholesky(SIGMA3), a, np.full(3, INF), 10**5, rng) @ np.linalg.cholesky(SIGMA3).T
    vals = []
    for s in range(10):
        rep = smc(p, RunConfig(M=5000, seed=s, ordering=True))
        assert rep.sample.permutation is not None
        y = to_original(rep.sample)
        assert np.all(y >= a - 1e-9)
        vals.append(rep.sample.weights @ y)
    vals = np.array(vals)
    se = np.sqrt(vals.var(axis=0, ddof=1) / 10 + ref.var(axis=0) / 1e5)
    assert np.all(np.abs(vals.mean(axis=0) - ref.mean(axis=0)) <= 4 * se)


def test_to_original_mean_and_scale():
    m = np.array([0.3])
    p = OrthantProblem([0.3], [INF], [[4.0]], mean=m)
    rep = smc(p, RunConfig(M=10**5, seed=6))
    y = to_original(rep.sample, mean=m)
    assert np.all(y >= 0.3)
    assert abs(y[:, 0].mean() - (0.3 + 2 * HALF_NORMAL_MEAN)) <= 3 * 2 * 0.61 / math.sqrt(1e5)


def test_to_original_student_scale():
    p = StudentOrthantProblem(OrthantProblem([1.0], [INF], [[1.0]]), 5.0)
    rep = smc_student(p, RunConfig(M=2000, seed=7))
    y = to_original(rep.sample)
    assert np.all(y >= 1.0 - 1e-9)


def test_gibbs_one_dimensional_mean(rng):
    chain = gibbs_truncated_sampler(OrthantProblem([0.0], [INF], [[1.0]]), 10**5, rng=rng)
    x = chain.flat()[:, 0]
    assert x.size == 10**5 and np.all(x >= 0)
    assert abs(x.mean() - HALF_NORMAL_MEAN) <= 3 * x.std() / math.sqrt(1e5)


def test_gibbs_diagonal_lag_one(rng):
    p = OrthantProblem([0.0, -1.0], [INF, 2.0], np.diag([1.0, 3.0]))
    chain = gibbs_truncated_sampler(p, 20000, rng=rng, n_chains=4)
    assert chain.acf.shape == (20, 2)
    assert np.all(np.abs(chain.acf[0]) <= 0.02)


def test_gibbs_box_mean_against_rejection(rng):
    chain = gibbs_truncated_sampler(OrthantProblem(A3, B3, SIGMA3), 2000, rng=rng, n_chains=200, burn_in=20)
    y = chain.flat() @ np.linalg.cholesky(SIGMA3).T
    ref = rejection_eta(np.linalg.cholesky(SIGMA3), A3, B3, 10**5, rng) @ np.linalg.cholesky(SIGMA3).T
    per_chain = (chain.samples @ np.linalg.cholesky(SIGMA3).T).mean(axis=0)
    se = np.sqrt(per_chain.var(axis=0, ddof=1) / 200 + ref.var(axis=0) / 1e5)
    assert np.all(np.abs(y.mean(axis=0) - ref.mean(axis=0)) <= 4 * se)


def test_gibbs_student_runs(rng):
    p = StudentOrthantProblem(gen_cauchy_problem(5, 2), 3.0)
    chain = gibbs_truncated_sampler(p, 500, thin=5, rng=rng, n_chains=3)
    assert chain.samples.shape == (100, 3, 5)
    assert chain.u.shape == (100, 3) and np.all(chain.u > 0)
    assert 0.0 < chain.diagnostics["u_acceptance"] < 1.0


def test_autocorrelation_examples():
    x = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
    np.testing.assert_allclose(autocorrelation(x, 2), [-5 / 6, 4 / 6])


def test_csv_export(tmp_path):
    path = tmp_path / "s.csv"
    samples = np.arange(6.0).reshape(3, 2)
    write_samples_csv(path, samples, u=np.array([1.0, 2.0, 3.0]))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["eta_1", "eta_2", "u"]
    assert [float(v) for v in rows[2]] == [2.0, 3.0, 2.0]
    write_samples_csv(path, samples)
    assert list(csv.reader(open(path)))[0] == ["eta_1", "eta_2"]


def test_infeasible_start_reported(monkeypatch, rng):
    monkeypatch.setattr(ex, "check_feasible", lambda cs, eta: np.zeros(eta.shape[0], dtype=bool))
    with pytest.raises(RuntimeError, match="no feasible starting point after 3 attempts"):
        gibbs_truncated_sampler(OrthantProblem([0.0], [INF], [[1.0]]), 10, rng=rng, max_start_attempts=3)
