"""GHK, particle filter and SMC estimators of orthant probabilities.

The three estimators share one engine.  Particles grow one whitened
coordinate at a time from the GHK proposal (the truncated conditional) and
are weighted by the truncation mass.  When the ESS falls below
``ess_threshold * M`` the current weight average is folded into the running
normalising constant, the particles are resampled systematically and, if a
move is configured, rejuvenated by an MCMC kernel targeting the current
truncated Gaussian.

* ``ess_threshold = 0``: no resampling, i.e. GHK.
* ``move = None``: particle filter.
* otherwise: SMC sampler.

All accumulation is done on log weights.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .gaussian import log_interval_mass, log_mean_exp, sample_truncated_std_normal
from .linalg import gibson_ordering
from .moves import ConstraintSystem, InfeasibleStateError, MoveConfig, apply_move, check_feasible
from .problem import OrthantProblem, encode_bound, standardize

__all__ = [
    "DeadSystemError",
    "RunConfig",
    "EstimateReport",
    "WeightedSample",
    "ReplicateSummary",
    "ess",
    "systematic_resample",
    "ghk",
    "smc",
    "repeat_estimate",
    "combine_reports",
    "replicate_seeds",
]

DEFAULT_BATCH = 1 << 16


class DeadSystemError(ValueError):
    """Every particle has weight zero."""

    def __init__(self, msg="particle system died"):
        super().__init__(msg)


def ess(log_weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2`` from log weights."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(lw > -np.inf):
        raise DeadSystemError()
    # shifting by the max keeps the ratio exact for equal weights
    e = np.exp(lw - lw.max())
    value = float(e.sum() ** 2 / (e @ e))
    return min(max(value, 1.0), float(lw.size))


def systematic_resample(log_weights, n: int, rng=None, u: float | None = None) -> np.ndarray:
    """Systematic resampling: ``n`` zero-based ancestor indices.

    A single uniform ``U`` in ``(0, 1]`` is shared by the points
    ``U, U + 1, ..., U + n - 1``, each of which picks the first index whose
    cumulative scaled weight ``n * W`` reaches it.  Pass ``u`` to fix ``U``.
    """
    lw = np.asarray(log_weights, dtype=float)
    if not np.any(lw > -np.inf):
        raise DeadSystemError()
    w = np.exp(lw - np.max(lw))
    c = np.cumsum(w)
    c *= n / c[-1]
    c[-1] = n
    if u is None:
        u = 1.0 - rng.random()
    pos = u + np.arange(n)
    return np.searchsorted(c, pos, side="left")


class Mixing(Protocol):
    """Hooks turning the engine into a sampler on an extended space."""

    refresh_each_step: bool

    def init(self, M: int, rng) -> np.ndarray: ...

    def scale(self, u: np.ndarray) -> np.ndarray: ...

    def update(self, cs: ConstraintSystem, eta: np.ndarray, u: np.ndarray, rng) -> float: ...


@dataclass
class RunConfig:
    """Engine settings.

    ``ess_threshold`` is the fraction of ``M`` below which resampling is
    triggered; 0 disables resampling.  ``check_constraints`` asserts, after
    every extension and move, that all live particles are feasible.
    """

    M: int = 1000
    ess_threshold: float = 0.5
    move: MoveConfig | None = field(default_factory=MoveConfig)
    ordering: bool = False
    seed: int | None = None
    check_constraints: bool = False
    keep_sample: bool = True

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must lie in [0, 1]")


@dataclass
class WeightedSample:
    """Terminal weighted particle system.

    ``paths`` are whitened coordinates of ``problem`` (which may be the
    reordered problem; ``permutation`` maps back to the caller's labels).
    ``u`` holds the Student mixing variable when present.
    """

    paths: np.ndarray
    log_weights: np.ndarray
    problem: OrthantProblem
    u: np.ndarray | None = None
    nu: float | None = None

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - np.max(self.log_weights))
        return w / w.sum()

    @property
    def permutation(self):
        return self.problem.meta.get("permutation")


@dataclass
class EstimateReport:
    log_prob: float
    failed: bool
    M: int
    seed: int | None
    ess_trace: list[tuple[int, float]] = field(default_factory=list)
    resample_events: list[int] = field(default_factory=list)
    move_stats: list[dict[str, Any]] = field(default_factory=list)
    wall_seconds: float = 0.0
    failure: str | None = None
    method: str = "smc"
    sample: WeightedSample | None = field(default=None, repr=False)

    @property
    def prob(self) -> float:
        return math.exp(self.log_prob)

    def to_dict(self, timing: bool = True) -> dict[str, Any]:
        return {
            "log_prob": encode_bound(self.log_prob) if math.isinf(self.log_prob) else float(self.log_prob),
            "failed": bool(self.failed),
            "ess_trace": [[int(t), float(e)] for t, e in self.ess_trace],
            "resample_events": [int(t) for t in self.resample_events],
            "M": int(self.M),
            "seed": self.seed,
            "wall_seconds": float(self.wall_seconds) if timing else 0.0,
        }

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing))


def _prepare(problem: OrthantProblem, ordering: bool) -> OrthantProblem:
    prob = standardize(problem)
    if ordering and prob.d > 1:
        prob = prob.permuted(gibson_ordering(prob.sigma, prob.a, prob.b))
    return prob


def _failed(cfg_M, seed, method, trace, events, stats, start, msg) -> EstimateReport:
    return EstimateReport(
        log_prob=-math.inf,
        failed=True,
        M=cfg_M,
        seed=seed,
        ess_trace=trace,
        resample_events=events,
        move_stats=stats,
        wall_seconds=time.perf_counter() - start,
        failure=msg,
        method=method,
    )


def _run(prob: OrthantProblem, cfg: RunConfig, rng, mixing: Mixing | None, method: str, trace_moments=None):
    """Core loop on a centred (and possibly reordered) problem."""
    start = time.perf_counter()
    M, d = cfg.M, prob.d
    g, a, b = prob.chol, prob.a, prob.b
    paths = np.zeros((M, d))
    logw = np.zeros(M)
    log_z = 0.0
    trace: list[tuple[int, float]] = []
    events: list[int] = []
    stats: list[dict[str, Any]] = []
    u = scale = None
    if mixing is not None:
        u = mixing.init(M, rng)
        scale = mixing.scale(u)
    threshold = cfg.ess_threshold * M

    for t in range(d):
        if t > 0:
            if trace[-1][1] < threshold:
                log_z += log_mean_exp(logw)
                idx = systematic_resample(logw, M, rng)
                paths[:, :t] = paths[idx, :t]
                logw[:] = 0.0
                if u is not None:
                    u = u[idx]
                    scale = scale[idx]
                events.append(t)
                if cfg.move is not None:
                    cs = ConstraintSystem(g[:t, :t], a[:t], b[:t], scale)
                    # the mixing update changes u in place and replaces cs.scale
                    pre = None if mixing is None else (lambda x, cs=cs, u=u: mixing.update(cs, x, u, rng))

                    eta = paths[:, :t].copy()
                    st = apply_move(cs, eta, cfg.move, rng, pre_step=pre)
                    paths[:, :t] = eta
                    scale = cs.scale
                    stats.append(st)
                    if cfg.check_constraints:
                        _assert_feasible(cs, paths[:, :t], logw)
            elif mixing is not None and mixing.refresh_each_step:
                cs = ConstraintSystem(g[:t, :t], a[:t], b[:t], scale)
                mixing.update(cs, paths[:, :t], u, rng)
                scale = cs.scale

        shift = paths[:, :t] @ g[t, :t]
        if scale is None:
            lo = (a[t] - shift) / g[t, t]
            hi = (b[t] - shift) / g[t, t]
        else:
            lo = (a[t] * scale - shift) / g[t, t]
            hi = (b[t] * scale - shift) / g[t, t]
        lm = log_interval_mass(lo, hi)
        paths[:, t] = sample_truncated_std_normal(lo, hi, rng)
        logw += lm
        logw[np.isnan(logw)] = -np.inf
        if cfg.check_constraints:
            _assert_feasible(ConstraintSystem(g[: t + 1, : t + 1], a[: t + 1], b[: t + 1], scale), paths[:, : t + 1], logw)
        if not np.any(logw > -np.inf):
            return _failed(M, cfg.seed, method, trace, events, stats, start, f"all weights zero at t={t + 1}"), None
        if trace_moments is not None:
            mx = float(np.max(logw))
            e = np.exp(logw - mx)
            trace_moments.append((mx, float(e.sum()), float(e @ e)))
        trace.append((t + 1, ess(logw)))

    log_prob = log_z + log_mean_exp(logw)
    sample = None
    if cfg.keep_sample:
        nu = getattr(mixing, "nu", None)
        sample = WeightedSample(paths, logw.copy(), prob, u=u, nu=nu)
    report = EstimateReport(
        log_prob=float(log_prob),
        failed=False,
        M=M,
        seed=cfg.seed,
        ess_trace=trace,
        resample_events=events,
        move_stats=stats,
        wall_seconds=time.perf_counter() - start,
        method=method,
        sample=sample,
    )
    return report, logw


def _assert_feasible(cs, eta, logw):
    live = logw > -np.inf
    ok = check_feasible(cs, eta)
    if not np.all(ok[live]):
        raise InfeasibleStateError(f"{int(np.sum(~ok[live]))} live particles violate the constraints")


def _rng(rng, seed):
    if rng is None:
        return np.random.default_rng(seed)
    return rng


def smc(problem: OrthantProblem, config: RunConfig | None = None, rng=None, *, mixing: Mixing | None = None) -> EstimateReport:
    """Adaptive SMC estimate of ``P(a <= Y <= b)``.

    With ``config.move = None`` this is the particle filter; if the ESS never
    drops below the threshold it is exactly GHK (same draws, same estimate).
    A dead system (all weights zero) yields a report with ``failed=True`` and
    ``log_prob=-inf`` instead of raising.
    """
    cfg = config or RunConfig()
    rng = _rng(rng, cfg.seed)
    method = "smc" if cfg.move is not None else ("pf" if cfg.ess_threshold > 0 else "ghk")
    start = time.perf_counter()
    prob = _prepare(problem, cfg.ordering)
    try:
        report, _ = _run(prob, cfg, rng, mixing, method)
    except DeadSystemError as exc:
        return _failed(cfg.M, cfg.seed, method, [], [], [], start, str(exc))
    report.wall_seconds = time.perf_counter() - start
    return report


def ghk(
    problem: OrthantProblem,
    M: int = 1000,
    rng=None,
    *,
    ordering: bool = False,
    seed: int | None = None,
    batch_size: int = DEFAULT_BATCH,
    keep_sample: bool = False,
) -> EstimateReport:
    """GHK simulator: sequential importance sampling without resampling.

    For ``M <= batch_size`` this is the engine with resampling disabled (so
    it coincides draw for draw with :func:`smc` whenever the latter never
    resamples).  Larger ``M`` is processed in batches to bound memory; the
    estimate and ESS trace are combined exactly.
    """
    rng = _rng(rng, seed)
    start = time.perf_counter()
    prob = _prepare(problem, ordering)
    if M <= batch_size:
        cfg = RunConfig(M=M, ess_threshold=0.0, move=None, seed=seed, keep_sample=keep_sample)
        report, _ = _run(prob, cfg, rng, None, "ghk")
        report.wall_seconds = time.perf_counter() - start
        return report

    # streaming sums of w and w^2 relative to a running max per coordinate
    ref = np.full(prob.d, -np.inf)
    s1 = np.zeros(prob.d)
    s2 = np.zeros(prob.d)
    done = 0
    while done < M:
        m = min(batch_size, M - done)
        if m < 2:
            m, done = 2, M - 2  # keep the engine's M >= 2 contract on the last sliver
        cfg = RunConfig(M=m, ess_threshold=0.0, move=None, seed=seed, keep_sample=False)
        moments: list[tuple[float, float, float]] = []
        report, _ = _run(prob, cfg, rng, None, "ghk", trace_moments=moments)
        if not report.failed:
            for t, (mx, e1, e2) in enumerate(moments):
                if mx > ref[t]:
                    f = math.exp(ref[t] - mx)
                    s1[t], s2[t], ref[t] = s1[t] * f + e1, s2[t] * f * f + e2, mx
                else:
                    f = math.exp(mx - ref[t])
                    s1[t] += e1 * f
                    s2[t] += e2 * f * f
        done += m
    if not np.isfinite(ref[-1]):
        return _failed(M, seed, "ghk", [], [], [], start, "all weights zero")
    trace = [(t + 1, float(min(max(s1[t] * s1[t] / s2[t], 1.0), M))) for t in range(prob.d)]
    return EstimateReport(
        log_prob=float(ref[-1] + math.log(s1[-1] / M)),
        failed=False,
        M=M,
        seed=seed,
        ess_trace=trace,
        wall_seconds=time.perf_counter() - start,
        method="ghk",
    )


@dataclass
class ReplicateSummary:
    """Statistics of replicate log-estimates (failed runs excluded, counted)."""

    n: int
    failures: int
    mean: float
    variance: float
    skewness: float
    wall_seconds: float

    @classmethod
    def from_reports(cls, reports) -> "ReplicateSummary":
        vals = np.array([r.log_prob for r in reports if not r.failed], dtype=float)
        fails = sum(1 for r in reports if r.failed)
        wall = float(sum(r.wall_seconds for r in reports))
        if vals.size == 0:
            return cls(0, fails, math.nan, math.nan, math.nan, wall)
        mean = float(vals.mean())
        var = float(vals.var(ddof=1)) if vals.size > 1 else 0.0
        sd = math.sqrt(var)
        skew = float(np.mean(((vals - mean) / sd) ** 3)) if sd > 0 else 0.0
        return cls(int(vals.size), fails, mean, var, skew, wall)


def combine_reports(reports: list[EstimateReport]) -> EstimateReport:
    """Joint estimate for independent problems: log-estimates add.

    Traces are concatenated with time indices offset so that they read as
    one run over the stacked coordinates.
    """
    if not reports:
        raise ValueError("no reports to combine")
    trace, events, offset = [], [], 0
    for r in reports:
        trace += [(t + offset, e) for t, e in r.ess_trace]
        events += [t + offset for t in r.resample_events]
        offset += max((t for t, _ in r.ess_trace), default=0)
    failed = any(r.failed for r in reports)
    return EstimateReport(
        log_prob=-math.inf if failed else float(sum(r.log_prob for r in reports)),
        failed=failed,
        M=reports[0].M,
        seed=reports[0].seed,
        ess_trace=trace,
        resample_events=events,
        move_stats=[st for r in reports for st in r.move_stats],
        wall_seconds=float(sum(r.wall_seconds for r in reports)),
        failure=next((r.failure for r in reports if r.failed), None),
        method=reports[0].method,
    )


def replicate_seeds(seed: int | None, R: int) -> list[int]:
    """Deterministic per-replication seeds derived from a master seed."""
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(R)]


def repeat_estimate(problem: OrthantProblem, config: RunConfig, R: int, rng=None, *, method: str = "smc", mixing_factory=None):
    """Run ``R`` independent replications.

    Replication ``k`` uses a seed derived from ``config.seed`` (or from a
    draw of ``rng``) and index ``k``.  ``method="ghk"`` runs :func:`ghk` with
    ``config.M`` draws.  Returns ``(reports, summary)``.
    """
    if R < 2:
        raise ValueError("R must be >= 2")
    master = config.seed if config.seed is not None else int(_rng(rng, None).integers(2**63))
    reports = []
    for s in replicate_seeds(master, R):
        if method == "ghk":
            reports.append(ghk(problem, config.M, ordering=config.ordering, seed=s))
        else:
            cfg = RunConfig(
                M=config.M,
                ess_threshold=config.ess_threshold,
                move=config.move,
                ordering=config.ordering,
                seed=s,
                check_constraints=config.check_constraints,
                keep_sample=False,
            )
            mixing = mixing_factory() if mixing_factory is not None else None
            reports.append(smc(problem, cfg, mixing=mixing))
    return reports, ReplicateSummary.from_reports(reports)
