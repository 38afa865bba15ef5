"""Student orthant probabilities through a chi-square scale mixture.

With ``u ~ chi2_nu`` and ``Z ~ N(0, sigma)``, ``X = Z sqrt(nu / u)`` is
multivariate Student, so ``P(a <= X <= b) = E_u[P(a s <= Z <= b s)]`` with
``s = sqrt(u / nu)``.  The SMC runs on the pair ``(eta, u)``: ``u`` is drawn
from its prior at the start, carried along by resampling, and updated by a
Metropolis-Hastings step at each move.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import EstimateReport, RunConfig, smc
from .gaussian import Interval
from .moves import ConstraintSystem
from .problem import OrthantProblem, bound_interval

__all__ = ["StudentOrthantProblem", "ChiSquareMixing", "student_bounds", "mh_update_u", "smc_student"]


@dataclass
class StudentOrthantProblem:
    base: OrthantProblem
    nu: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")

    @property
    def d(self) -> int:
        return self.base.d

    def to_dict(self):
        doc = self.base.to_dict()
        doc["nu"] = float(self.nu)
        return doc

    @classmethod
    def from_dict(cls, doc):
        if "nu" not in doc:
            raise ValueError("Student problem document lacks field 'nu'")
        return cls(OrthantProblem.from_dict(doc), float(doc["nu"]))


def student_bounds(problem: OrthantProblem, u: float, nu: float, i: int, eta_prefix) -> Interval:
    """``bound_interval`` with ``a`` and ``b`` scaled by ``sqrt(u / nu)``."""
    if not u > 0:
        raise ValueError("u must be positive")
    s = math.sqrt(u / nu)
    g = problem.chol
    eta_prefix = np.asarray(eta_prefix, dtype=float)
    shift = eta_prefix @ g[i, :i]
    if s == 1.0:
        return bound_interval(problem, i, eta_prefix)
    return Interval((problem.a[i] * s - shift) / g[i, i], (problem.b[i] * s - shift) / g[i, i])


def _log_chi2(u, nu):
    return (0.5 * nu - 1.0) * np.log(u) - 0.5 * u


def mh_update_u(cs: ConstraintSystem, eta, u, nu: float, step: float, rng) -> np.ndarray:
    """One random-walk MH step on ``log u`` targeting ``p(u | eta)``.

    ``cs.scale`` is ignored for the feasibility check (the proposed scale is
    used instead).  Returns the boolean acceptance mask; ``u`` is updated in
    place.
    """
    eta = np.atleast_2d(eta)
    u = np.atleast_1d(u)
    prop = u * np.exp(step * rng.standard_normal(u.shape))
    # log-scale walk: Jacobian u'/u
    log_ratio = _log_chi2(prop, nu) - _log_chi2(u, nu) + np.log(prop) - np.log(u)
    s = np.sqrt(prop / nu)[:, None]
    r = eta @ cs.g.T
    feasible = np.all((r >= cs.a[None, :] * s) & (r <= cs.b[None, :] * s), axis=1)
    ok = feasible & (np.log(rng.random(u.shape)) < log_ratio)
    u[ok] = prop[ok]
    return ok


class ChiSquareMixing:
    """Engine hooks for the chi-square mixing variable."""

    def __init__(self, nu: float, step: float = 0.5, refresh_each_step: bool = False):
        self.nu = float(nu)
        self.step = float(step)
        self.refresh_each_step = refresh_each_step

    def init(self, M, rng):
        return rng.chisquare(self.nu, M)

    def scale(self, u):
        return np.sqrt(u / self.nu)

    def update(self, cs: ConstraintSystem, eta, u, rng) -> float:
        ok = mh_update_u(cs, eta, u, self.nu, self.step, rng)
        cs.scale = self.scale(u)
        return float(ok.mean())


def smc_student(problem: StudentOrthantProblem, config: RunConfig | None = None, rng=None, *, refresh_each_step: bool = False) -> EstimateReport:
    """SMC estimate of the Student orthant probability on the extended space."""
    cfg = config or RunConfig()
    step = cfg.move.u_step if cfg.move is not None else 0.5
    mixing = ChiSquareMixing(problem.nu, step, refresh_each_step)
    return smc(problem.base, cfg, rng, mixing=mixing)
