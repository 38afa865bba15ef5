"""MCMC kernels leaving the truncated whitened Gaussian invariant.

The current target after ``t`` coordinates is ``N(0, I_t)`` restricted to the
polytope ``a_j <= (G eta)_j <= b_j`` for ``j < t``, where ``G`` is the leading
``t x t`` block of the Cholesky factor.  Bounds can be scaled per particle
(``lower = a * scale``), which is how the Student extension conditions on
its mixing variable.

All kernels act on a whole ``(M, t)`` particle array at once and update it in
place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .gaussian import sample_truncated_std_normal

__all__ = [
    "ConstraintSystem",
    "MoveConfig",
    "InfeasibleStateError",
    "BounceCapExceeded",
    "conditional_interval",
    "gibbs_sweep",
    "block_gibbs_sweep",
    "overrelax_step",
    "overrelax_alpha",
    "hmc_step",
    "move_until_stable",
    "apply_move",
    "check_feasible",
]

KINDS = ("gibbs", "overrelax", "hmc", "block_gibbs")


class InfeasibleStateError(RuntimeError):
    """A particle violates the constraints it is supposed to satisfy."""


class BounceCapExceeded(RuntimeError):
    pass


@dataclass
class ConstraintSystem:
    """Rows ``a <= G eta <= b`` of the current target.

    ``scale`` (shape ``(M,)``) multiplies both bound vectors per particle.
    """

    g: np.ndarray
    a: np.ndarray
    b: np.ndarray
    scale: np.ndarray | None = None

    @property
    def t(self) -> int:
        return self.g.shape[0]

    @classmethod
    def from_problem(cls, problem, t: int | None = None, scale=None) -> "ConstraintSystem":
        t = problem.d if t is None else t
        return cls(problem.chol[:t, :t], problem.a[:t], problem.b[:t], scale)

    def bounds(self):
        """Per-particle bound arrays, broadcastable against ``(M, t)``."""
        if self.scale is None:
            return self.a[None, :], self.b[None, :]
        s = np.asarray(self.scale, dtype=float)[:, None]
        return self.a[None, :] * s, self.b[None, :] * s


@dataclass
class MoveConfig:
    """Selection and tuning of the move applied after each resampling.

    Parameters
    ----------
    kind : {"gibbs", "overrelax", "hmc", "block_gibbs"}
    window : int
        Number of trailing coordinates updated by ``block_gibbs``.
    alpha : float, "auto" or "small"
        Overrelaxation coefficient.  ``"auto"`` is ``1 - 0.5 t^(-1/3)``;
        ``"small"`` is ``0.004 (1 - t^(-1/3))``, a near-independent refresh.
    repeat : int or None
        Fixed number of kernel applications; ``None`` repeats until the
        total displacement stabilises to relative tolerance ``tol``.
    horizon : float or None
        HMC integration time; ``None`` draws it uniformly on ``[0, pi]``.
    u_step : float
        Log-scale random-walk step for the Student mixing variable.
    """

    kind: str = "gibbs"
    window: int = 1
    alpha: float | str = "auto"
    repeat: int | None = None
    tol: float = 0.01
    max_rounds: int = 50
    horizon: float | None = None
    max_bounces: int = 10_000
    u_step: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown move kind {self.kind!r}; expected one of {KINDS}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.repeat is None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.repeat is not None and self.repeat < 1:
            raise ValueError("repeat must be >= 1")

    @classmethod
    def parse(cls, text: str, **kw) -> "MoveConfig | None":
        """Parse ``none|gibbs|overrelax|hmc|block:L``."""
        text = text.strip().lower()
        if text in ("none", ""):
            return None
        if text.startswith("block"):
            _, _, n = text.partition(":")
            return cls(kind="block_gibbs", window=int(n) if n else 2, **kw)
        return cls(kind=text, **kw)

    def label(self) -> str:
        return f"block:{self.window}" if self.kind == "block_gibbs" else self.kind


def _residuals(cs: ConstraintSystem, eta: np.ndarray) -> np.ndarray:
    return eta @ cs.g.T


def check_feasible(cs: ConstraintSystem, eta, rtol: float = 1e-7) -> np.ndarray:
    """Boolean mask of particles satisfying every row (with rounding slack)."""
    eta = np.atleast_2d(eta)
    r = _residuals(cs, eta)
    lo, hi = cs.bounds()
    slack = rtol * (np.abs(eta) @ np.abs(cs.g.T) + 1.0)
    return np.all((r >= lo - slack) & (r <= hi + slack), axis=1)


def _conditional(cs: ConstraintSystem, i: int, eta: np.ndarray, r: np.ndarray, lo_b, hi_b):
    col = cs.g[i:, i]
    others = r[:, i:] - eta[:, i : i + 1] * col
    lb = lo_b[:, i:] - others
    ub = hi_b[:, i:] - others
    with np.errstate(divide="ignore", invalid="ignore"):
        x1 = lb / col
        x2 = ub / col
    neg = col < 0
    zero = col == 0
    low = np.where(neg, x2, x1)
    high = np.where(neg, x1, x2)
    # rows not involving coordinate i only need to hold already
    tol = 1e-8 * (1.0 + np.abs(others))
    broken = zero & ((others < lo_b[:, i:] - tol) | (others > hi_b[:, i:] + tol))
    low = np.where(zero, np.where(broken, np.inf, -np.inf), low)
    high = np.where(zero, np.inf, high)
    return low.max(axis=1), high.min(axis=1)


def _repair(lo, hi, cur):
    """Tolerate round-off that puts the current point marginally outside."""
    bad = lo > hi
    if np.any(bad):
        gap = lo - hi
        tol = 1e-8 * (1.0 + np.abs(lo) + np.abs(hi))
        if np.any(gap[bad] > tol[bad]):
            raise InfeasibleStateError("conditional interval is empty; particle is infeasible")
        pt = np.clip(cur, hi, lo)
        lo = np.where(bad, pt, lo)
        hi = np.where(bad, pt, hi)
    return lo, hi


def conditional_interval(cs: ConstraintSystem, i: int, eta):
    """Full-conditional interval of coordinate ``i`` given the others.

    Intersects, over rows ``j >= i``, the half-lines implied by
    ``a_j <= sum_k g_jk eta_k <= b_j``, flipping orientation when
    ``g_ji < 0`` and skipping rows with ``g_ji == 0``.

    Returns ``(lower, upper)`` arrays of shape ``(M,)`` (scalars for a single
    path).

    Raises
    ------
    InfeasibleStateError
        If the interval is empty, i.e. the current point is infeasible.
    """
    single = np.ndim(eta) == 1
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    lo_b, hi_b = cs.bounds()
    lo_b = np.broadcast_to(lo_b, eta.shape)
    hi_b = np.broadcast_to(hi_b, eta.shape)
    lo, hi = _conditional(cs, i, eta, _residuals(cs, eta), lo_b, hi_b)
    lo, hi = _repair(lo, hi, eta[:, i])
    cur = eta[:, i]
    tol = 1e-8 * (1.0 + np.abs(cur))
    if np.any(cur < lo - tol) or np.any(cur > hi + tol):
        raise InfeasibleStateError("current point lies outside its conditional interval")
    if single:
        return float(lo[0]), float(hi[0])
    return lo, hi


@njit(cache=True)
def _conditional_kernel(r, eta_i, gi, i, a, b, scale, lo_out, hi_out):
    # same intersection as _conditional, one particle at a time
    M, t = r.shape
    inf = np.inf
    for m in range(M):
        s = scale[m]
        e = eta_i[m]
        lo = -inf
        hi = inf
        for j in range(i, t):
            c = gi[j - i]
            if c == 0.0:
                continue
            other = r[m, j] - e * c
            x1 = (a[j] * s - other) / c
            x2 = (b[j] * s - other) / c
            if c > 0.0:
                if x1 > lo:
                    lo = x1
                if x2 < hi:
                    hi = x2
            else:
                if x2 > lo:
                    lo = x2
                if x1 < hi:
                    hi = x1
        lo_out[m] = lo
        hi_out[m] = hi


@njit(cache=True)
def _shift_residuals(r, delta, gi, i):
    M, t = r.shape
    for m in range(M):
        dm = delta[m]
        for j in range(i, t):
            r[m, j] += dm * gi[j - i]


def _gibbs_coords(cs, eta, coords, rng):
    M = eta.shape[0]
    r = np.ascontiguousarray(_residuals(cs, eta))
    scale = np.ones(M) if cs.scale is None else np.ascontiguousarray(cs.scale, dtype=float)
    a = np.ascontiguousarray(cs.a, dtype=float)
    b = np.ascontiguousarray(cs.b, dtype=float)
    lo = np.empty(M)
    hi = np.empty(M)
    for i in coords:
        gi = np.ascontiguousarray(cs.g[i:, i])
        cur = np.ascontiguousarray(eta[:, i])
        _conditional_kernel(r, cur, gi, i, a, b, scale, lo, hi)
        lo_i, hi_i = _repair(lo, hi, cur)
        new = sample_truncated_std_normal(lo_i, hi_i, rng)
        eta[:, i] = new
        _shift_residuals(r, new - cur, gi, i)
    return eta


def gibbs_sweep(cs: ConstraintSystem, eta: np.ndarray, rng) -> np.ndarray:
    """One systematic-scan Gibbs sweep over coordinates ``0..t-1`` (in place)."""
    return _gibbs_coords(cs, eta, range(cs.t), rng)


def block_gibbs_sweep(cs: ConstraintSystem, eta: np.ndarray, window: int, rng) -> np.ndarray:
    """Gibbs sweep restricted to the last ``window`` coordinates.

    Full conditionals still involve every later row, so the kernel leaves
    the whole target invariant.  ``window >= t`` is exactly :func:`gibbs_sweep`.
    """
    t = cs.t
    return _gibbs_coords(cs, eta, range(max(0, t - window), t), rng)


def overrelax_alpha(alpha, t: int) -> float:
    if alpha == "auto":
        return 1.0 - 0.5 * t ** (-1.0 / 3.0)
    if alpha == "small":
        return 0.004 * (1.0 - t ** (-1.0 / 3.0))
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    return alpha


def overrelax_step(cs: ConstraintSystem, eta: np.ndarray, alpha: float, rng) -> float:
    """Propose ``alpha * eta + sqrt(1 - alpha^2) z``; keep it if feasible.

    Updates ``eta`` in place and returns the acceptance rate.
    """
    z = rng.standard_normal(eta.shape)
    prop = alpha * eta + math.sqrt(1.0 - alpha * alpha) * z
    lo_b, hi_b = cs.bounds()
    r = _residuals(cs, prop)
    ok = np.all((r >= lo_b) & (r <= hi_b), axis=1)
    eta[ok] = prop[ok]
    return float(ok.mean())


def hmc_step(
    cs: ConstraintSystem,
    eta: np.ndarray,
    rng,
    horizon: float | None = None,
    max_bounces: int = 10_000,
    guard: float = 1e-12,
    diagnostics: dict | None = None,
) -> np.ndarray:
    """Exact HMC for the truncated standard Gaussian with reflecting walls.

    The unconstrained motion is ``eta(s) = eta cos s + p sin s``.  For each
    row the projection ``A cos s + B sin s`` is compared to its bounds: a
    lower wall is crossed at ``s = phase + arccos(a/R)`` and an upper wall at
    ``s = phase - arccos(b/R)`` (mod ``2 pi``), which selects only crossings
    heading out of the polytope.  At the first crossing the velocity is
    reflected about the wall and the motion resumes.

    If ``diagnostics`` is a dict it receives ``bounces`` (per particle) and
    ``max_energy_error`` (largest change of ``|eta|^2 + |p|^2`` along any
    segment or reflection).

    Raises
    ------
    BounceCapExceeded
        When a particle exceeds ``max_bounces`` reflections.
    """
    M, t = eta.shape
    g = cs.g
    gnorm2 = np.sum(g * g, axis=1)
    lo_all, hi_all = cs.bounds()
    lo_all = np.broadcast_to(lo_all, eta.shape)
    hi_all = np.broadcast_to(hi_all, eta.shape)
    p = rng.standard_normal((M, t))
    remaining = rng.uniform(0.0, math.pi, M) if horizon is None else np.full(M, float(horizon))
    bounces = np.zeros(M, dtype=int)
    two_pi = 2.0 * math.pi
    max_err = 0.0
    active = np.flatnonzero(remaining > 0)
    while active.size:
        x = eta[active]
        v = p[active]
        A = x @ g.T
        B = v @ g.T
        R = np.hypot(A, B)
        phase = np.arctan2(B, A)
        lo = lo_all[active]
        hi = hi_all[active]
        with np.errstate(divide="ignore", invalid="ignore"):
            cl = lo / R
            cu = hi / R
            tl = np.where(np.isfinite(lo) & (np.abs(cl) <= 1.0), phase + np.arccos(np.clip(cl, -1, 1)), np.inf)
            tu = np.where(np.isfinite(hi) & (np.abs(cu) <= 1.0), phase - np.arccos(np.clip(cu, -1, 1)), np.inf)
        with np.errstate(invalid="ignore"):
            tl = np.mod(tl, two_pi)
            tu = np.mod(tu, two_pi)
        tl = np.where(tl <= guard, tl + two_pi, tl)
        tu = np.where(tu <= guard, tu + two_pi, tu)
        tl = np.where(np.isnan(tl), np.inf, tl)
        tu = np.where(np.isnan(tu), np.inf, tu)
        cand = np.minimum(tl, tu)
        j = np.argmin(cand, axis=1)
        s_hit = cand[np.arange(active.size), j]
        hit = s_hit < remaining[active]
        s = np.where(hit, s_hit, remaining[active])[:, None]

        e0 = np.sum(x * x + v * v, axis=1)
        cs_, sn = np.cos(s), np.sin(s)
        nx = x * cs_ + v * sn
        nv = v * cs_ - x * sn
        if np.any(hit):
            gj = g[j[hit]]
            coef = 2.0 * np.sum(nv[hit] * gj, axis=1) / gnorm2[j[hit]]
            nv[hit] -= coef[:, None] * gj
        e1 = np.sum(nx * nx + nv * nv, axis=1)
        max_err = max(max_err, float(np.max(np.abs(e1 - e0))))

        eta[active] = nx
        p[active] = nv
        remaining[active] = np.where(hit, remaining[active] - s[:, 0], 0.0)
        bounces[active[hit]] += 1
        if np.any(bounces > max_bounces):
            raise BounceCapExceeded("bounce cap exceeded")
        active = active[hit]
    if diagnostics is not None:
        diagnostics["bounces"] = bounces
        diagnostics["max_energy_error"] = max_err
    return eta


def move_until_stable(
    eta: np.ndarray,
    step: Callable[[np.ndarray], object],
    tol: float = 0.01,
    max_rounds: int = 50,
) -> int:
    """Apply ``step`` until the total displacement stabilises.

    After round ``k`` the displacement ``D_k = sum |eta(k) - eta(k-1)|`` is
    computed over all particles and coordinates; iteration stops once
    ``|D_k - D_{k-1}| <= tol * D_{k-1}`` or after ``max_rounds`` rounds.
    Returns the number of rounds performed.
    """
    prev = eta.copy()
    d_prev = None
    rounds = 0
    while rounds < max_rounds:
        step(eta)
        rounds += 1
        disp = float(np.sum(np.abs(eta - prev)))
        prev[...] = eta
        if d_prev is not None and abs(disp - d_prev) <= tol * d_prev:
            break
        d_prev = disp
    return rounds


def apply_move(
    cs: ConstraintSystem,
    eta: np.ndarray,
    config: MoveConfig,
    rng,
    pre_step: Callable[[np.ndarray], float] | None = None,
) -> dict:
    """Run the configured kernel (repeated per ``config``) on ``eta`` in place.

    ``pre_step`` is called at the start of each round, before the kernel;
    the Student extension uses it to update its mixing variable (it may
    change ``cs.scale``).  Returns per-event statistics.
    """
    t = cs.t
    acc: list[float] = []
    pre_acc: list[float] = []
    alpha = overrelax_alpha(config.alpha, t) if config.kind == "overrelax" else None

    def one_round(x):
        if pre_step is not None:
            pre_acc.append(pre_step(x))
        if config.kind == "gibbs":
            gibbs_sweep(cs, x, rng)
            acc.append(1.0)
        elif config.kind == "block_gibbs":
            block_gibbs_sweep(cs, x, config.window, rng)
            acc.append(1.0)
        elif config.kind == "overrelax":
            acc.append(overrelax_step(cs, x, alpha, rng))
        else:
            hmc_step(cs, x, rng, horizon=config.horizon, max_bounces=config.max_bounces)
            acc.append(1.0)

    if config.repeat is not None:
        for _ in range(config.repeat):
            one_round(eta)
        rounds = config.repeat
    else:
        rounds = move_until_stable(eta, one_round, config.tol, config.max_rounds)
    stats = {"t": t, "kind": config.label(), "sweeps": rounds, "acceptance": float(np.mean(acc))}
    if pre_acc:
        stats["u_acceptance"] = float(np.mean(pre_acc))
    return stats
