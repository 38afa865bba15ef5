"""Shared oracles for the test-suite.

Everything here is computed independently of the package internals: closed
forms, scipy quadrature and plain rejection sampling.
"""

import math

import numpy as np
import pytest
from scipy import integrate, special, stats


def quadrant_prob(rho):
    """P(Y1 >= 0, Y2 >= 0) for unit variances and correlation rho."""
    return 0.25 + math.asin(rho) / (2 * math.pi)


def orthant3_prob(r12, r13, r23):
    """P(Y >= 0) in three dimensions with unit variances."""
    return 0.125 + (math.asin(r12) + math.asin(r13) + math.asin(r23)) / (4 * math.pi)


def box_prob_2d(sigma, a, b):
    """P(a <= Y <= b) for a centred bivariate normal by 1-D quadrature."""
    s1 = math.sqrt(sigma[0][0])
    beta = sigma[0][1] / sigma[0][0]
    sc = math.sqrt(sigma[1][1] - beta * sigma[0][1])

    def f(x):
        return stats.norm.pdf(x, scale=s1) * (special.ndtr((b[1] - beta * x) / sc) - special.ndtr((a[1] - beta * x) / sc))

    lo = max(a[0], -40 * s1)
    hi = min(b[0], 40 * s1)
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)
    return val


def rejection_eta(g, a, b, n, rng, batch=200_000):
    """Exact draws of eta ~ N(0, I) conditioned on a <= G eta <= b."""
    g = np.asarray(g, float)
    out = []
    got = 0
    while got < n:
        z = rng.standard_normal((batch, g.shape[0]))
        y = z @ g.T
        ok = np.all((y >= a) & (y <= b), axis=1)
        out.append(z[ok])
        got += int(ok.sum())
    return np.concatenate(out)[:n]


def ks_statistic(sample, cdf):
    x = np.sort(np.asarray(sample))
    n = x.size
    f = cdf(x)
    return max(np.max(np.arange(1, n + 1) / n - f), np.max(f - np.arange(n) / n))


def ks_critical(n, level=1e-3):
    """Asymptotic one-sample KS critical value."""
    return math.sqrt(-0.5 * math.log(level / 2)) / math.sqrt(n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
