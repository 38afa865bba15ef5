"""Scalar Gaussian primitives, vectorised over numpy arrays.

Every function accepts scalars or arrays for the interval bounds and
broadcasts them.  Bounds may be ``-inf``/``+inf``.  Probability masses are
returned in log scale; an empty interval (``lower >= upper``) has log-mass
``-inf``.

Numerically delicate regimes (far tails, very narrow intervals) are handled
by mirroring every interval to the right half-line and working with the
survival function, so no cancellation between two values close to one ever
happens.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import special

__all__ = [
    "Interval",
    "std_normal_cdf",
    "std_normal_logpdf",
    "log_interval_mass",
    "sample_truncated_std_normal",
    "truncated_mean",
    "log_sum_exp",
    "log_mean_exp",
    "TAIL_THRESHOLD",
]

# beyond this many standard deviations the inverse-cdf sampler is replaced by
# exact rejection sampling
TAIL_THRESHOLD = 8.0

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_LN2 = np.log(2.0)
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class Interval(NamedTuple):
    """Closed interval ``[lower, upper]`` on the extended real line."""

    lower: float
    upper: float

    @property
    def is_empty(self) -> bool:
        return not self.lower <= self.upper


def std_normal_cdf(x):
    """Standard normal cdf, exact at ``+-inf``."""
    return special.ndtr(x)


def std_normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > -_LN2, np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _as_bounds(lower, upper):
    lo, hi = np.broadcast_arrays(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))
    return lo, hi


def _mirror(lo, hi):
    """Reflect intervals lying in the left half-line onto the right one.

    Returns ``(lo, hi, sign)`` such that the original interval is
    ``sign * [lo, hi]`` and either ``lo >= 0`` or ``lo < 0 < hi``.
    """
    flip = hi <= 0.0
    sign = np.where(flip, -1.0, 1.0)
    return np.where(flip, -hi, lo), np.where(flip, -lo, hi), sign


def _narrow(lo, hi):
    # intervals on which the density varies by less than a few percent
    w = hi - lo
    with np.errstate(over="ignore", invalid="ignore"):
        return (w < 1e-2) & (w * (np.abs(lo) + w) < 1e-2)


def _narrow_log_mass(lo, hi):
    # Gauss-Legendre on  int_0^w exp(-lo*s - s^2/2) ds,  factored by phi(lo)
    w = (hi - lo)[..., None]
    s = 0.5 * w * (_GL_NODES + 1.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        g = np.log(0.5 * (hi - lo)) + np.log(np.sum(_GL_WEIGHTS * np.exp(-lo[..., None] * s - 0.5 * s * s), axis=-1))
        return std_normal_logpdf(lo) + g


def _narrow_mean(lo, hi):
    w = (hi - lo)[..., None]
    s = 0.5 * w * (_GL_NODES + 1.0)
    with np.errstate(invalid="ignore", over="ignore"):
        f = _GL_WEIGHTS * np.exp(-lo[..., None] * s - 0.5 * s * s)
        return lo + np.sum(f * s, axis=-1) / np.sum(f, axis=-1)


def log_interval_mass(lower, upper):
    """``log(Phi(upper) - Phi(lower))`` without cancellation.

    Accurate deep in either tail (e.g. ``[40, 41]``) and for very narrow
    intervals.  Empty or degenerate intervals give ``-inf``.
    """
    lo, hi = _as_bounds(lower, upper)
    lo, hi, _ = _mirror(lo, hi)
    empty = ~(lo < hi)
    lo = np.where(empty, 0.0, lo)
    hi = np.where(empty, 1.0, hi)

    straddle = lo < 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        centre = np.log1p(-(special.ndtr(np.where(straddle, lo, -1.0)) + special.ndtr(-np.where(straddle, hi, 1.0))))
        lo_r = np.where(straddle, 0.0, lo)
        hi_r = np.where(straddle, 1.0, hi)
        l_lo = special.log_ndtr(-lo_r)
        l_hi = special.log_ndtr(-hi_r)
        right = np.where(l_lo == -np.inf, -np.inf, l_lo + _log1mexp(l_hi - l_lo))
    narrow = _narrow(lo_r, hi_r) & ~straddle
    if np.any(narrow):
        right = np.where(narrow, _narrow_log_mass(lo_r, hi_r), right)
    out = np.where(straddle, centre, right)
    out = np.where(empty, -np.inf, out)
    return out[()] if out.ndim == 0 else out


def truncated_mean(lower, upper):
    """Mean of a standard normal truncated to ``[lower, upper]``.

    Computes ``(phi(lower) - phi(upper)) / (Phi(upper) - Phi(lower))`` in log
    scale, so that it stays finite and inside the interval in far tails.

    Raises
    ------
    ValueError
        If any interval is empty.
    """
    lo0, hi0 = _as_bounds(lower, upper)
    if np.any(~(lo0 <= hi0)):
        raise ValueError("empty truncation")
    lo, hi, sign = _mirror(lo0, hi0)
    point = lo == hi
    hi = np.where(point, lo + 1.0, hi)
    lm = log_interval_mass(lo, hi)
    with np.errstate(over="ignore", invalid="ignore"):
        m = np.exp(std_normal_logpdf(lo) - lm) - np.exp(std_normal_logpdf(hi) - lm)
    narrow = _narrow(lo, hi) & (lo >= 0.0)
    if np.any(narrow):
        m = np.where(narrow, _narrow_mean(lo, hi), m)
    m = np.clip(m, lo, hi)
    m = np.where(point, lo, m)
    out = sign * m
    return out[()] if out.ndim == 0 else out


def sample_truncated_std_normal(lower, upper, rng: np.random.Generator):
    """Exact draws from N(0, 1) truncated to ``[lower, upper]``.

    Within ``TAIL_THRESHOLD`` standard deviations the inverse cdf is used (on
    the survival side for right-tail intervals).  Intervals lying entirely
    beyond the threshold are sampled by rejection: a translated exponential
    proposal with the optimal rate for wide intervals, a uniform proposal for
    narrow ones.  Both are exact.

    The number of uniform variates consumed depends only on the input
    shapes and on the rejection outcomes, so runs are reproducible from the
    generator state.

    Raises
    ------
    ValueError
        If any interval is empty (``lower > upper``).
    """
    lo0, hi0 = _as_bounds(lower, upper)
    if np.any(~(lo0 <= hi0)):
        raise ValueError("empty truncation")
    scalar = lo0.ndim == 0
    lo, hi, sign = _mirror(np.atleast_1d(lo0), np.atleast_1d(hi0))
    lo = lo.ravel()
    hi = hi.ravel()
    sign = sign.ravel()
    out = np.empty_like(lo)

    u = rng.random(lo.shape)
    straddle = lo < 0.0
    tail = lo > TAIL_THRESHOLD
    body = ~straddle & ~tail

    if np.any(straddle):
        pl = special.ndtr(lo[straddle])
        ph = special.ndtr(hi[straddle])
        out[straddle] = special.ndtri(pl + u[straddle] * (ph - pl))
    if np.any(body):
        ql = special.ndtr(-lo[body])
        qh = special.ndtr(-hi[body])
        out[body] = -special.ndtri(ql - u[body] * (ql - qh))
    if np.any(tail):
        out[tail] = _tail_rejection(lo[tail], hi[tail], rng)

    out = sign * np.clip(out, lo, hi)
    if scalar:
        return float(out[0])
    return out.reshape(lo0.shape)


def _tail_rejection(lo, hi, rng):
    """Exact sampling on ``[lo, hi]`` with ``lo > 0`` far in the tail."""
    out = np.empty_like(lo)
    with np.errstate(over="ignore"):
        use_unif = 0.5 * (hi - lo) * (hi + lo) < 1.0
    lam = 0.5 * lo * (1.0 + np.sqrt(1.0 + (2.0 / lo) ** 2))
    pending = np.arange(lo.size)
    while pending.size:
        lp, hp, un = lo[pending], hi[pending], use_unif[pending]
        e = rng.standard_exponential(pending.size)
        v = rng.random(pending.size)
        x_exp = lp + e / lam[pending]
        x_uni = lp + v * np.where(un, hp - lp, 0.0)
        x = np.where(un, x_uni, x_exp)
        with np.errstate(over="ignore", invalid="ignore"):
            logacc = np.where(un, -0.5 * (x - lp) * (x + lp), -0.5 * (x - lam[pending]) ** 2)
        w = rng.random(pending.size)
        ok = (x <= hp) & (np.log(w) <= logacc)
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def log_sum_exp(xs, axis=None):
    """``log(sum(exp(xs)))``; ``-inf`` when every entry is ``-inf``."""
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    mx = np.max(xs, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(xs - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(s.reshape(()))
    return np.squeeze(s, axis=axis)


def log_mean_exp(xs, axis=None):
    """``log(mean(exp(xs)))``; exact when all entries are equal."""
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise ValueError("log_mean_exp of an empty sequence")
    mx = np.max(xs, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.mean(np.exp(xs - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(s.reshape(()))
    return np.squeeze(s, axis=axis)
