"""Orthant problems and the generators used in the experiments.

An orthant problem asks for ``P(a <= Y <= b)`` with ``Y ~ N(mean, sigma)``.
With ``sigma = G G^T`` (Cholesky) and ``Y = mean + G eta``, the constraint on
the i-th whitened coordinate given the previous ones is an interval, see
:func:`bound_interval`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .gaussian import Interval
from .linalg import NotPositiveDefiniteError, check_symmetric, cholesky, invert_permutation, permute_problem

__all__ = [
    "OrthantProblem",
    "Ar1Spec",
    "ProbitPanelSpec",
    "standardize",
    "bound_interval",
    "gen_cauchy_problem",
    "gen_ar1_problem",
    "gen_thurstonian",
    "gen_probit_panel",
    "encode_bound",
    "decode_bound",
]


@dataclass
class OrthantProblem:
    """Box probability ``P(a <= Y <= b)`` for ``Y ~ N(mean, sigma)``.

    The Cholesky factor ``chol`` is computed on construction unless an exact
    one is supplied (the AR(1) generator does so).  Instances are treated as
    immutable once built.
    """

    a: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    mean: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)
    chol: np.ndarray | None = None

    def __post_init__(self):
        self.sigma = check_symmetric(self.sigma)
        d = self.sigma.shape[0]
        self.a = np.array(self.a, dtype=float).reshape(-1)
        self.b = np.array(self.b, dtype=float).reshape(-1)
        if self.a.shape != (d,) or self.b.shape != (d,):
            raise ValueError(f"bounds must have length {d}")
        if np.any(np.isnan(self.a)) or np.any(np.isnan(self.b)):
            raise ValueError("bounds must not be NaN")
        if not np.all(self.a < self.b):
            bad = int(np.argmax(~(self.a < self.b)))
            raise ValueError(f"empty box: a[{bad}] >= b[{bad}]")
        self.mean = np.zeros(d) if self.mean is None else np.array(self.mean, dtype=float).reshape(-1)
        if self.mean.shape != (d,):
            raise ValueError(f"mean must have length {d}")
        if self.chol is None:
            self.chol = cholesky(self.sigma)
        else:
            self.chol = np.asarray(self.chol, dtype=float)

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    def permuted(self, perm) -> "OrthantProblem":
        """Problem with coordinates relabelled by the zero-based ``perm``."""
        sigma, a, b = permute_problem(self.sigma, self.a, self.b, perm)
        meta = dict(self.meta)
        meta["permutation"] = [int(i) for i in perm]
        return OrthantProblem(a, b, sigma, mean=self.mean[np.asarray(perm)], meta=meta)

    def unpermuted(self) -> "OrthantProblem":
        perm = self.meta.get("permutation")
        if perm is None:
            return self
        inv = invert_permutation(perm)
        meta = {k: v for k, v in self.meta.items() if k != "permutation"}
        sigma, a, b = permute_problem(self.sigma, self.a, self.b, inv)
        return OrthantProblem(a, b, sigma, mean=self.mean[inv], meta=meta)

    # -- serialisation -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "d": self.d,
            "a": [encode_bound(x) for x in self.a],
            "b": [encode_bound(x) for x in self.b],
            "sigma": self.sigma.tolist(),
            "mean": self.mean.tolist(),
            "meta": _jsonable(self.meta),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "OrthantProblem":
        try:
            d = int(doc["d"])
            a = [decode_bound(x) for x in doc["a"]]
            b = [decode_bound(x) for x in doc["b"]]
            sigma = np.array(doc["sigma"], dtype=float)
        except KeyError as exc:
            raise ValueError(f"problem document lacks field {exc}") from None
        if sigma.shape != (d, d):
            raise ValueError(f"sigma has shape {sigma.shape}, expected ({d}, {d})")
        return cls(a, b, sigma, mean=doc.get("mean"), meta=dict(doc.get("meta", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "OrthantProblem":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")


def encode_bound(x: float):
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return float(x)


def decode_bound(x) -> float:
    if isinstance(x, str):
        s = x.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        if s in ("-inf", "-infinity"):
            return -math.inf
        raise ValueError(f"bad bound {x!r}")
    return float(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return encode_bound(obj)
    return obj


def standardize(problem: OrthantProblem) -> OrthantProblem:
    """Shift the box by the mean so that the Gaussian is centred."""
    if not np.any(problem.mean):
        return problem
    return OrthantProblem(
        problem.a - problem.mean,
        problem.b - problem.mean,
        problem.sigma,
        meta=dict(problem.meta),
        chol=problem.chol,
    )


def bound_interval(problem: OrthantProblem, i: int, eta_prefix) -> Interval:
    """Interval for whitened coordinate ``i`` (zero-based) given ``eta[:i]``.

    The problem is assumed centred (see :func:`standardize`).
    """
    if not 0 <= i < problem.d:
        raise IndexError(f"coordinate {i} out of range for d={problem.d}")
    eta_prefix = np.asarray(eta_prefix, dtype=float)
    if eta_prefix.shape[-1:] != (i,):
        raise ValueError(f"prefix must have length {i}")
    g = problem.chol
    shift = eta_prefix @ g[i, :i]
    return Interval((problem.a[i] - shift) / g[i, i], (problem.b[i] - shift) / g[i, i])


# -- generators ----------------------------------------------------------


def gen_cauchy_problem(d: int, seed: int, scale: float = 0.01, n_rows: int = 200) -> OrthantProblem:
    """Random heavy-tailed covariance and lower truncation.

    ``X`` has ``max(n_rows, d)`` rows of iid Cauchy(0, scale) entries and
    ``sigma = X^T X``; ``a_i ~ Cauchy(0, scale)`` and ``b = +inf``.  Column
    ``j`` of ``X`` and ``a_j`` come from their own seeded streams, so for a
    fixed seed (and ``d <= n_rows``) a smaller problem is the leading block
    of a larger one.

    If the product is numerically singular, ``1e-10 * trace / d`` is added
    to the diagonal (repeatedly, growing tenfold) and ``meta["jitter"]``
    records the amount.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rows = max(n_rows, d)
    x = np.empty((rows, d))
    a = np.empty(d)
    for j in range(d):
        x[:, j] = scale * np.random.default_rng([seed, 0, j]).standard_cauchy(rows)
        a[j] = scale * np.random.default_rng([seed, 1, j]).standard_cauchy()
    sigma = x.T @ x
    sigma = 0.5 * (sigma + sigma.T)
    meta: dict[str, Any] = {"generator": "cauchy", "seed": seed, "scale": scale, "n_rows": rows}
    jitter = 1e-10 * np.trace(sigma) / d
    base = sigma
    for _ in range(12):
        try:
            chol = cholesky(sigma)
            break
        except NotPositiveDefiniteError:
            meta["jitter"] = jitter
            sigma = base + jitter * np.eye(d)
            jitter *= 10.0
    else:
        raise NotPositiveDefiniteError(d)
    return OrthantProblem(a, np.full(d, np.inf), sigma, meta=meta, chol=chol)


@dataclass
class Ar1Spec:
    """AR(1) box problem ``x_t = rho x_{t-1} + sigma e_t`` on ``[a, b]^T``."""

    T: int
    rho: float
    b: float
    a: float = 0.0
    sigma: float = 1.0
    stationary: bool = False


def gen_ar1_problem(spec: Ar1Spec) -> OrthantProblem:
    """Box probability for an AR(1) path.

    By default ``x_1 ~ N(0, sigma^2)``; with ``stationary=True`` it starts from
    ``N(0, sigma^2 / (1 - rho^2))``.  The Cholesky factor is built exactly,
    ``G[t, s] = sigma * rho^(t-s)`` (times the start scaling in column 0), so
    the whitened recursion gives the interval
    ``[(a - rho x_{t-1}) / sigma, (b - rho x_{t-1}) / sigma]`` at every step.
    """
    T, rho, s = int(spec.T), float(spec.rho), float(spec.sigma)
    if T < 1:
        raise ValueError("T must be >= 1")
    if s <= 0:
        raise ValueError("sigma must be positive")
    if spec.stationary and not abs(rho) < 1:
        raise ValueError("stationary start needs |rho| < 1")
    lag = np.subtract.outer(np.arange(T), np.arange(T))
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(lag >= 0, s * np.power(rho, np.maximum(lag, 0)), 0.0)
    if spec.stationary:
        g[:, 0] /= math.sqrt(1.0 - rho * rho)
    sigma = g @ g.T
    sigma = 0.5 * (sigma + sigma.T)
    meta = {"generator": "ar1", "T": T, "rho": rho, "sigma": s, "stationary": spec.stationary}
    return OrthantProblem(np.full(T, spec.a), np.full(T, spec.b), sigma, meta=meta, chol=g)


def gen_thurstonian(beta: Sequence[float], sigma: float = 1.0) -> OrthantProblem:
    """Probability of the ranking ``X_p > ... > X_1`` with ``X_j ~ N(beta_j, sigma^2)``.

    Built on the differences ``D_i = X_{i+1} - X_i`` (dimension ``p - 1``),
    whose covariance is ``sigma^2`` times the tridiagonal (2, -1) matrix; the
    problem is returned already centred.
    """
    beta = np.asarray(beta, dtype=float)
    p = beta.size
    if p < 2:
        raise ValueError("need at least two alternatives")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = p - 1
    cov = sigma**2 * (2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1))
    mean = np.diff(beta)
    meta = {"generator": "thurstonian", "beta": beta.tolist(), "sigma": sigma}
    return standardize(OrthantProblem(np.zeros(n), np.full(n, np.inf), cov, mean=mean, meta=meta))


def gen_thurstonian_observations(beta: Sequence[float], n_obs: int, seed: int, sigma: float = 1.0) -> list[OrthantProblem]:
    """One ranking problem per observation, rankings simulated from the model.

    Observation ``k`` draws ``X ~ N(beta, sigma^2 I)`` and records the order
    of its entries; its likelihood is the ranking probability of that order.
    The joint likelihood of independent observations is the product.
    """
    beta = np.asarray(beta, dtype=float)
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_obs):
        order = np.argsort(beta + sigma * rng.standard_normal(beta.size), kind="stable")
        prob = gen_thurstonian(beta[order], sigma)
        prob.meta["ranking"] = order.tolist()
        out.append(prob)
    return out


@dataclass
class ProbitPanelSpec:
    """Multinomial probit panel for one individual.

    Utilities are ``U_kt = X_kt . beta + alpha_k + eta_kt`` with
    ``alpha ~ N(0, alpha_cov)`` and ``eta_kt = rho eta_k,t-1 + nu_kt``,
    ``nu_t ~ N(0, nu_cov)`` (``eta_k,0 = 0``).  Unset parts are drawn from
    the seed: regressors are standard normal, ``beta`` standard normal,
    covariances are ``alpha_var`` / ``nu_var`` times random correlation
    matrices, and the choices are simulated from the model itself.
    """

    J: int
    T: int
    choices: Sequence[int] | None = None
    rho: float = 0.5
    alpha_var: float = 0.5
    nu_var: float = 1.0
    alpha_cov: np.ndarray | None = None
    nu_cov: np.ndarray | None = None
    n_regressors: int = 3
    beta: np.ndarray | None = None
    X: np.ndarray | None = None


def _random_correlation(J: int, rng: np.random.Generator) -> np.ndarray:
    f = rng.standard_normal((J, J))
    c = f @ f.T + J * np.eye(J)
    s = np.sqrt(np.diag(c))
    return c / np.outer(s, s)


def gen_probit_panel(spec: ProbitPanelSpec, seed: int) -> OrthantProblem:
    """Likelihood of an observed choice sequence as a ``T(J-1)``-dim orthant.

    Coordinates are ordered by period, then alternative (skipping the chosen
    one).  Coordinate ``(t, k)`` is ``u_kt - u_{j_t, t}`` which must stay below
    ``(X_{j_t t} - X_kt) . beta``.
    """
    J, T = int(spec.J), int(spec.T)
    if J < 2 or T < 1:
        raise ValueError("need J >= 2 and T >= 1")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((T, J, spec.n_regressors)) if spec.X is None else np.asarray(spec.X, float)
    beta = rng.standard_normal(X.shape[2]) if spec.beta is None else np.asarray(spec.beta, float)
    alpha_cov = spec.alpha_var * _random_correlation(J, rng) if spec.alpha_cov is None else np.asarray(spec.alpha_cov, float)
    nu_cov = spec.nu_var * _random_correlation(J, rng) if spec.nu_cov is None else np.asarray(spec.nu_cov, float)
    rho = float(spec.rho)

    # covariance of u = (u_kt) stacked period-major
    s, t = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
    m = np.minimum(s, t) + 1
    time_cov = rho ** np.abs(s - t) * np.array([[sum(rho ** (2 * i) for i in range(mm)) for mm in row] for row in m])
    cov_u = np.kron(np.ones((T, T)), alpha_cov) + np.kron(time_cov, nu_cov)

    v = X @ beta
    if spec.choices is None:
        u = cholesky(cov_u + 1e-12 * np.eye(J * T)) @ rng.standard_normal(J * T)
        choices = np.argmax(v + u.reshape(T, J), axis=1)
    else:
        choices = np.asarray(spec.choices, dtype=int)
        if choices.shape != (T,) or np.any(choices < 0) or np.any(choices >= J):
            raise ValueError(f"choices must be {T} indices in 0..{J - 1}")

    n = T * (J - 1)
    diff = np.zeros((n, J * T))
    upper = np.empty(n)
    r = 0
    for tt in range(T):
        j = choices[tt]
        for k in range(J):
            if k == j:
                continue
            diff[r, tt * J + k] = 1.0
            diff[r, tt * J + j] = -1.0
            upper[r] = v[tt, j] - v[tt, k]
            r += 1
    cov = diff @ cov_u @ diff.T
    cov = 0.5 * (cov + cov.T)
    meta = {
        "generator": "probit_panel",
        "seed": seed,
        "J": J,
        "T": T,
        "rho": rho,
        "choices": choices.tolist(),
        "beta": beta.tolist(),
    }
    return OrthantProblem(np.full(n, -np.inf), upper, cov, meta=meta)
