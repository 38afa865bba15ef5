"""Expectations under truncated Gaussian / Student laws.

Two routes: the self-normalised estimate from the terminal SMC particle
system, and a single-site Gibbs sampler (in whitened coordinates, plus a
Metropolis step on the mixing variable for Student targets) used as a
benchmark.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import DeadSystemError, WeightedSample
from .gaussian import sample_truncated_std_normal
from .moves import ConstraintSystem, check_feasible, gibbs_sweep
from .problem import OrthantProblem, standardize
from .student import StudentOrthantProblem, mh_update_u

__all__ = [
    "weighted_expectation",
    "to_original",
    "GibbsChain",
    "gibbs_truncated_sampler",
    "autocorrelation",
    "write_samples_csv",
]


def weighted_expectation(sample: WeightedSample, h=None) -> np.ndarray:
    """Self-normalised estimate of ``E[h(eta)]`` under the terminal target.

    ``h`` maps the ``(M, t)`` array of paths to an ``(M,)`` or ``(M, k)``
    array; ``None`` means the identity (per-coordinate means).
    """
    lw = np.asarray(sample.log_weights, dtype=float)
    if not np.any(lw > -np.inf):
        raise DeadSystemError()
    w = np.exp(lw - lw.max())
    w /= w.sum()
    values = sample.paths if h is None else np.asarray(h(sample.paths), dtype=float)
    return np.tensordot(w, values, axes=(0, 0))


def to_original(sample: WeightedSample, mean=None) -> np.ndarray:
    """Map whitened paths back to the variable ``y`` in the caller's labels.

    ``y = mean + G eta`` (times ``sqrt(nu / u)`` for Student samples), with
    columns un-permuted if the run reordered the coordinates.  ``mean`` is
    the original problem's mean in the caller's order (default 0).
    """
    y = sample.paths @ sample.problem.chol.T
    if sample.u is not None:
        y = y * np.sqrt(sample.nu / sample.u)[:, None]
    perm = sample.permutation
    if perm is not None:
        out = np.empty_like(y)
        out[:, np.asarray(perm)] = y
        y = out
    if mean is not None:
        y = y + np.asarray(mean, dtype=float)
    return y


@dataclass
class GibbsChain:
    """Thinned output of :func:`gibbs_truncated_sampler`.

    ``samples`` has shape ``(n_kept, n_chains, d)`` in whitened coordinates;
    ``acf[k - 1, i]`` is the lag-``k`` autocorrelation of coordinate ``i``
    (averaged over chains) computed on the thinned draws.
    """

    samples: np.ndarray
    u: np.ndarray | None
    acf: np.ndarray
    thin: int
    diagnostics: dict = field(default_factory=dict)

    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Lag ``1..max_lag`` autocorrelations along axis 0 (per column)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    var = np.sum(xc * xc, axis=0)
    out = np.full((max_lag,) + x.shape[1:], np.nan)
    for k in range(1, min(max_lag, n - 1) + 1):
        with np.errstate(invalid="ignore", divide="ignore"):
            out[k - 1] = np.sum(xc[k:] * xc[:-k], axis=0) / var
    return out


def _ghk_start(prob: OrthantProblem, n_chains: int, nu, rng, attempts: int):
    d = prob.d
    g = prob.chol
    for _ in range(attempts):
        u = rng.chisquare(nu, n_chains) if nu is not None else None
        s = np.ones(n_chains) if u is None else np.sqrt(u / nu)
        eta = np.zeros((n_chains, d))
        for t in range(d):
            shift = eta[:, :t] @ g[t, :t]
            eta[:, t] = sample_truncated_std_normal(
                (prob.a[t] * s - shift) / g[t, t], (prob.b[t] * s - shift) / g[t, t], rng
            )
        cs = ConstraintSystem(g, prob.a, prob.b, None if u is None else s)
        if np.all(check_feasible(cs, eta)):
            return eta, u
    raise RuntimeError(f"no feasible starting point after {attempts} attempts")


def gibbs_truncated_sampler(
    problem: OrthantProblem | StudentOrthantProblem,
    n_iter: int,
    thin: int = 1,
    rng=None,
    *,
    n_chains: int = 1,
    burn_in: int = 0,
    max_lag: int = 20,
    u_step: float = 0.5,
    max_start_attempts: int = 100,
) -> GibbsChain:
    """Benchmark MCMC for the truncated Gaussian (or Student) law.

    Each iteration is one systematic Gibbs sweep over the whitened
    coordinates, preceded for Student targets by a random-walk MH update of
    the mixing variable.  Chains start from a GHK draw.  Every ``thin``-th
    state after ``burn_in`` iterations is kept.
    """
    rng = np.random.default_rng(rng)
    if isinstance(problem, StudentOrthantProblem):
        prob, nu = standardize(problem.base), problem.nu
    else:
        prob, nu = standardize(problem), None
    eta, u = _ghk_start(prob, n_chains, nu, rng, max_start_attempts)
    cs = ConstraintSystem(prob.chol, prob.a, prob.b, None if u is None else np.sqrt(u / nu))

    kept, kept_u = [], []
    accepted = 0
    for it in range(burn_in + n_iter):
        if u is not None:
            ok = mh_update_u(cs, eta, u, nu, u_step, rng)
            accepted += int(ok.sum())
            cs.scale = np.sqrt(u / nu)
        gibbs_sweep(cs, eta, rng)
        if it >= burn_in and (it - burn_in + 1) % thin == 0:
            kept.append(eta.copy())
            if u is not None:
                kept_u.append(u.copy())
    samples = np.array(kept).reshape(len(kept), n_chains, prob.d)
    acf = np.full((max_lag, prob.d), np.nan)
    if len(kept) > 1:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # lags beyond the chain length are all-NaN
            acf = np.nanmean(autocorrelation(samples, max_lag), axis=1)
    diag = {"iterations": burn_in + n_iter, "kept": len(kept)}
    if u is not None:
        diag["u_acceptance"] = accepted / ((burn_in + n_iter) * n_chains)
    return GibbsChain(samples, np.array(kept_u) if kept_u else None, acf, thin, diag)


def write_samples_csv(path: str | Path, samples: np.ndarray, u: np.ndarray | None = None) -> None:
    """One row per draw; columns ``eta_1..eta_d`` and optionally ``u``."""
    samples = np.asarray(samples, dtype=float).reshape(-1, np.shape(samples)[-1])
    d = samples.shape[1]
    header = [f"eta_{i + 1}" for i in range(d)] + (["u"] if u is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        uu = None if u is None else np.asarray(u, dtype=float).reshape(-1)
        for k, row in enumerate(samples):
            vals = [repr(float(x)) for x in row]
            if uu is not None:
                vals.append(repr(float(uu[k])))
            w.writerow(vals)
