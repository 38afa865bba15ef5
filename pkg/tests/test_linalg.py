import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from conftest import orthant3_prob
from orthant.linalg import (
    NotPositiveDefiniteError,
    check_permutation,
    cholesky,
    gibson_ordering,
    invert_permutation,
    permute_problem,
)

INF = math.inf


def random_spd(d, rng):
    x = rng.standard_normal((d + 3, d))
    return x.T @ x


def test_cholesky_examples():
    np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(cholesky([[4.0, 2.0], [2.0, 5.0]]), [[2.0, 0.0], [1.0, 2.0]], atol=1e-15)


def test_cholesky_pivot_error():
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky([[1.0, 1.0], [1.0, 1.0]])
    assert info.value.pivot == 2
    assert isinstance(info.value, np.linalg.LinAlgError)


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        cholesky([[1.0, 0.5], [0.0, 1.0]])


@pytest.mark.parametrize("d", [1, 2, 7, 40])
def test_cholesky_reconstruction(d, rng):
    s = random_spd(d, rng)
    g = cholesky(s)
    assert np.all(np.diag(g) > 0)
    assert np.array_equal(g, np.tril(g))
    assert np.max(np.abs(g @ g.T - s)) <= 1e-10 * np.max(np.abs(s))


def test_permute_examples():
    rho = 0.3
    s = np.array([[1.0, rho], [rho, 2.0]])
    s2, a2, b2 = permute_problem(s, [0.0, 1.0], [2.0, 3.0], [1, 0])
    np.testing.assert_array_equal(s2, [[2.0, rho], [rho, 1.0]])
    np.testing.assert_array_equal(a2, [1.0, 0.0])
    np.testing.assert_array_equal(b2, [3.0, 2.0])
    s3, a3, b3 = permute_problem(s, [0.0, 1.0], [2.0, 3.0], [0, 1])
    np.testing.assert_array_equal(s3, s)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31))
def test_permute_round_trip(d, seed):
    rng = np.random.default_rng(seed)
    s = random_spd(d, rng)
    a = rng.normal(size=d)
    b = a + 1.0
    p = rng.permutation(d)
    s2, a2, b2 = permute_problem(s, a, b, p)
    s3, a3, b3 = permute_problem(s2, a2, b2, invert_permutation(p))
    np.testing.assert_array_equal(s3, s)
    np.testing.assert_array_equal(a3, a)
    np.testing.assert_array_equal(b3, b)


def test_permutation_checks():
    with pytest.raises(ValueError):
        check_permutation([0, 0, 1], 3)
    with pytest.raises(ValueError):
        permute_problem(np.eye(2), [0.0], [1.0, 2.0], [0, 1])


def naive_gibson(sigma, a, b):
    """Brute-force greedy ordering: full refactorisation for every candidate."""
    d = len(a)
    chosen: list[int] = []
    y: list[float] = []
    for j in range(d):
        best, best_mass = None, None
        for k in range(d):
            if k in chosen:
                continue
            order = chosen + [k]
            g = np.linalg.cholesky(sigma[np.ix_(order, order)])
            shift = g[j, :j] @ np.array(y)
            lo, hi = (a[k] - shift) / g[j, j], (b[k] - shift) / g[j, j]
            mass = special.ndtr(hi) - special.ndtr(lo)
            if best is None or mass < best_mass:
                best, best_mass, best_iv = k, mass, (lo, hi)
        chosen.append(best)
        lo, hi = best_iv
        mass = special.ndtr(hi) - special.ndtr(lo)
        phi = lambda x: 0.0 if math.isinf(x) else math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
        y.append((phi(lo) - phi(hi)) / mass)
    return np.array(chosen)


@pytest.mark.parametrize("seed", range(8))
def test_gibson_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    d = 7
    s = random_spd(d, rng) / d
    a = rng.normal(scale=1.0, size=d)
    b = np.where(rng.random(d) < 0.5, INF, a + rng.uniform(0.5, 3.0, d))
    np.testing.assert_array_equal(gibson_ordering(s, a, b), naive_gibson(s, a, b))


def test_gibson_first_index_is_smallest_mass(rng):
    d = 12
    s = random_spd(d, rng)
    a = rng.normal(size=d) * np.sqrt(np.diag(s))
    b = np.full(d, INF)
    p = gibson_ordering(s, a, b)
    masses = special.ndtr(-a / np.sqrt(np.diag(s)))
    assert p[0] == int(np.argmin(masses))


def test_gibson_examples():
    p = gibson_ordering(np.eye(3), [-INF, -INF, 3.0], [INF, INF, INF])
    assert p[0] == 2
    np.testing.assert_array_equal(gibson_ordering([[2.0]], [0.0], [INF]), [0])


def test_gibson_ties_smallest_index():
    d = 5
    s = 0.5 * np.eye(d) + 0.5
    np.testing.assert_array_equal(gibson_ordering(s, np.zeros(d), np.full(d, INF)), np.arange(d))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**31))
def test_gibson_returns_permutation(d, seed):
    rng = np.random.default_rng(seed)
    s = random_spd(d, rng)
    a = rng.normal(size=d)
    p = gibson_ordering(s, a, a + rng.uniform(0.1, 5, d))
    check_permutation(p, d)


def test_orthant_probability_permutation_invariant():
    corr = np.array([[1.0, 0.3, -0.2], [0.3, 1.0, 0.5], [-0.2, 0.5, 1.0]])
    ref = orthant3_prob(corr[0, 1], corr[0, 2], corr[1, 2])
    for p in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
        c2, _, _ = permute_problem(corr, np.zeros(3), np.full(3, INF), p)
        assert orthant3_prob(c2[0, 1], c2[0, 2], c2[1, 2]) == pytest.approx(ref, abs=1e-12)


def test_gibson_propagates_not_pd():
    with pytest.raises(NotPositiveDefiniteError):
        gibson_ordering(np.ones((3, 3)), np.zeros(3), np.full(3, INF))
