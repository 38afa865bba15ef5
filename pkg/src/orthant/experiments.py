"""Replication harness: experiment configs, equal-compute calibration, outputs.

An experiment config is a flat JSON document::

    {"experiment": "ar1-toy", "dims": [100, 150, 200], "R": 50, "seed": 1,
     "methods": ["ghk", "pf"], "M": 1000, "equal_compute": false}

``methods`` entries are either shorthand strings (``"ghk"``, ``"pf"``,
``"smc"``, ``"smc:overrelax"``, ``"smc:block:5"``) or flat objects with keys
``method``, ``move``, ``M``, ``ess``, ``ordering``, ``name``.  Each run
writes one JSON line to ``<out>/runs.jsonl`` and the aggregates to
``<out>/summary.csv``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .estimators import EstimateReport, ReplicateSummary, RunConfig, combine_reports, ghk, replicate_seeds, smc
from .expectations import gibbs_truncated_sampler, weighted_expectation
from .moves import MoveConfig
from .problem import (
    Ar1Spec,
    ProbitPanelSpec,
    gen_ar1_problem,
    gen_cauchy_problem,
    gen_probit_panel,
    gen_thurstonian,
    gen_thurstonian_observations,
)
from .student import StudentOrthantProblem, smc_student

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "MethodSpec",
    "ExperimentConfig",
    "build_problem",
    "run_method",
    "calibrate_particles",
    "run_experiment",
    "summary_rows",
]

EXPERIMENTS = ("ar1-toy", "thurstone", "ordering", "compare-moves", "highdim", "student", "probit", "expectation")

# ordering is switched off by default where the natural order carries the structure
_ORDER_DEFAULT = {"ar1-toy": False, "thurstone": False}

SUMMARY_FIELDS = ["method", "dimension", "M", "runs", "mean_log_prob", "variance", "skewness", "failures", "wall_seconds"]


class ConfigError(ValueError):
    """Malformed experiment configuration (message names the field)."""


@dataclass
class MethodSpec:
    method: str
    move: str = "gibbs"
    M: int = 1000
    ess: float = 0.5
    ordering: bool | None = None
    name: str | None = None

    @classmethod
    def parse(cls, item, defaults: dict[str, Any]) -> "MethodSpec":
        base = {k: defaults[k] for k in ("M", "ess") if k in defaults}
        if "move" in defaults:
            base["move"] = defaults["move"]
        if isinstance(item, str):
            head, _, rest = item.partition(":")
            doc = {"method": head}
            if rest:
                doc["move"] = rest
        elif isinstance(item, dict):
            doc = dict(item)
        else:
            raise ConfigError(f"methods: entry {item!r} must be a string or an object")
        unknown = set(doc) - {"method", "move", "M", "ess", "ordering", "name"}
        if unknown:
            raise ConfigError(f"methods: unknown field(s) {sorted(unknown)}")
        spec = cls(**{**base, **doc})
        if spec.method not in ("ghk", "pf", "smc"):
            raise ConfigError(f"methods: unknown method {spec.method!r}")
        if spec.method == "smc":
            try:
                MoveConfig.parse(spec.move)
            except ValueError as exc:
                raise ConfigError(f"methods: {exc}") from None
        if int(spec.M) < 2:
            raise ConfigError("methods: M must be >= 2")
        spec.M = int(spec.M)
        return spec

    def label(self) -> str:
        if self.name:
            return self.name
        out = self.method if self.method != "smc" else f"smc({self.move})"
        if self.ordering is not None:
            out += "+ord" if self.ordering else "-ord"
        return out


@dataclass
class ExperimentConfig:
    experiment: str
    dims: list[int]
    R: int = 10
    seed: int = 0
    methods: list[MethodSpec] = field(default_factory=list)
    ordering: bool = True
    equal_compute: bool = False
    timing: bool = True
    out: str = "results"
    params: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        name = doc.get("experiment")
        if name not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")
        dims = doc.get("dims", doc.get("dim"))
        if dims is None:
            raise ConfigError("dims: required")
        dims = [dims] if isinstance(dims, int) else list(dims)
        if not dims or not all(isinstance(x, int) and x >= 1 for x in dims):
            raise ConfigError("dims: expected positive integers")
        R = doc.get("R", doc.get("replications", 10))
        if not isinstance(R, int) or R < 1:
            raise ConfigError("R: expected an integer >= 1")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed: expected an integer")
        known = {"experiment", "dims", "dim", "R", "replications", "seed", "methods", "ordering", "equal_compute", "timing", "out", "M", "ess", "move"}
        params = {k: v for k, v in doc.items() if k not in known}
        defaults = {k: doc[k] for k in ("M", "ess", "move") if k in doc}
        raw = doc.get("methods", _default_methods(name))
        if not isinstance(raw, list) or not raw:
            raise ConfigError("methods: expected a non-empty list")
        methods = [MethodSpec.parse(m, defaults) for m in raw]
        return cls(
            experiment=name,
            dims=dims,
            R=R,
            seed=seed,
            methods=methods,
            ordering=bool(doc.get("ordering", _ORDER_DEFAULT.get(name, True))),
            equal_compute=bool(doc.get("equal_compute", False)),
            timing=bool(doc.get("timing", True)),
            out=str(doc.get("out", "results")),
            params=params,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc)


def _default_methods(name: str) -> list:
    return {
        "ar1-toy": ["ghk", "pf"],
        "thurstone": ["ghk", "pf", "smc"],
        "ordering": [{"method": "ghk", "ordering": False}, {"method": "ghk", "ordering": True}],
        "compare-moves": ["smc:gibbs", "smc:overrelax", "smc:hmc", "smc:block:5"],
        "highdim": ["smc", "ghk"],
        "student": ["smc", "ghk"],
        "probit": ["smc", "ghk"],
        "expectation": ["smc"],
    }[name]


def build_problem(cfg: ExperimentConfig, d: int):
    """Problem instance of experiment ``cfg`` at size ``d``.

    A ``thurstone`` config with ``observations > 1`` yields a list of
    independent ranking problems whose probabilities multiply.
    """
    p = cfg.params
    pseed = int(p.get("problem_seed", cfg.seed))
    name = cfg.experiment
    if name == "ar1-toy":
        return gen_ar1_problem(Ar1Spec(T=d, rho=float(p.get("rho", 0.7)), b=float(p.get("b", 15.0)), a=float(p.get("a", 0.0))))
    if name == "thurstone":
        beta = p.get("beta")
        beta = np.zeros(d) if beta is None else np.asarray(beta, dtype=float)[:d]
        n_obs = int(p.get("observations", 1))
        if n_obs > 1:
            return gen_thurstonian_observations(beta, n_obs, pseed)
        return gen_thurstonian(beta)
    if name == "probit":
        spec = ProbitPanelSpec(J=int(p.get("J", 3)), T=d, rho=float(p.get("rho", 0.5)))
        return gen_probit_panel(spec, pseed)
    base = gen_cauchy_problem(d, pseed)
    if name == "student" or "nu" in p:
        return StudentOrthantProblem(base, float(p.get("nu", 3.0)))
    return base


def run_method(problem, spec: MethodSpec, seed: int, default_ordering: bool) -> EstimateReport:
    """One estimation run of ``spec`` on ``problem`` with ``seed``.

    A list of independent problems is run one by one under seeds derived
    from ``seed`` and the reports are combined.
    """
    if isinstance(problem, list):
        seeds = replicate_seeds(seed, len(problem))
        return combine_reports([run_method(p, spec, s, default_ordering) for p, s in zip(problem, seeds)])
    ordering = default_ordering if spec.ordering is None else spec.ordering
    student = isinstance(problem, StudentOrthantProblem)
    if spec.method == "ghk" and not student:
        return ghk(problem, spec.M, ordering=ordering, seed=seed)
    if spec.method == "ghk":
        cfg = RunConfig(M=spec.M, ess_threshold=0.0, move=None, ordering=ordering, seed=seed, keep_sample=False)
    else:
        move = None if spec.method == "pf" else MoveConfig.parse(spec.move)
        cfg = RunConfig(M=spec.M, ess_threshold=spec.ess, move=move, ordering=ordering, seed=seed, keep_sample=False)
    rep = smc_student(problem, cfg) if student else smc(problem, cfg)
    rep.method = spec.method
    return rep


def calibrate_particles(run: Callable[[MethodSpec, int], Any], specs: list[MethodSpec], seed: int, n_pilot: int = 2) -> list[int]:
    """Equal-compute particle counts from pilot timings.

    The first spec is the reference and keeps its ``M``; every other spec is
    timed at its configured ``M`` and rescaled by ``t_ref / t_k``.
    """
    times = []
    for k, spec in enumerate(specs):
        best = math.inf
        for j in range(n_pilot):
            t0 = time.perf_counter()
            run(spec, seed + 7919 * (k + 1) + j)
            best = min(best, time.perf_counter() - t0)
        times.append(max(best, 1e-6))
    return [specs[0].M] + [max(2, int(round(s.M * times[0] / t))) for s, t in zip(specs[1:], times[1:])]


def _seeds(master: int, d: int, k: int, R: int) -> list[int]:
    ss = np.random.SeedSequence([master, d, k])
    return [int(c.generate_state(1)[0]) for c in ss.spawn(R)]


def summary_rows(records: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Aggregate JSON-lines records into one row per (method, dimension)."""
    groups: dict[tuple[str, int], list[dict[str, Any]]] = {}
    for r in records:
        if r.get("kind", "run") != "run":
            continue
        groups.setdefault((r["method"], r["dimension"]), []).append(r)
    rows = []
    for (method, dim), recs in groups.items():
        reps = [
            EstimateReport(log_prob=-math.inf if r["failed"] else float(r["log_prob"]), failed=r["failed"], M=r["M"], seed=r["seed"], wall_seconds=r["wall_seconds"])
            for r in recs
        ]
        s = ReplicateSummary.from_reports(reps)
        rows.append(
            {
                "method": method,
                "dimension": dim,
                "M": recs[0]["M"],
                "runs": len(recs),
                "mean_log_prob": s.mean,
                "variance": s.variance,
                "skewness": s.skewness,
                "failures": s.failures,
                "wall_seconds": s.wall_seconds,
            }
        )
    return rows


def _write_summary(path: Path, rows: list[dict[str, Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def _expectation_records(cfg: ExperimentConfig, problem, d: int, log) -> None:
    """SMC weighted means vs. a Gibbs benchmark given ``multiplier`` x the time."""
    multiplier = float(cfg.params.get("multiplier", 100))
    thin = int(cfg.params.get("thin", 1))
    spec = cfg.methods[0]
    for rep_idx, s in enumerate(_seeds(cfg.seed, d, 0, cfg.R)):
        mcfg = MoveConfig.parse(spec.move) if spec.method == "smc" else None
        rc = RunConfig(M=spec.M, ess_threshold=spec.ess, move=mcfg, ordering=False, seed=s)
        t0 = time.perf_counter()
        rep = smc_student(problem, rc) if isinstance(problem, StudentOrthantProblem) else smc(problem, rc)
        t_smc = time.perf_counter() - t0
        est = None if rep.failed else weighted_expectation(rep.sample).tolist()
        log({"kind": "expectation", "method": spec.label(), "dimension": d, "replication": rep_idx, "seed": s, "estimate": est, "wall_seconds": t_smc if cfg.timing else 0.0})
        # size the Gibbs run from a short pilot so it gets multiplier x the SMC time
        t0 = time.perf_counter()
        gibbs_truncated_sampler(problem, 20, 1, s)
        per_iter = max((time.perf_counter() - t0) / 20, 1e-7)
        n_iter = int(cfg.params.get("gibbs_iterations", max(thin, int(multiplier * t_smc / per_iter))))
        t0 = time.perf_counter()
        chain = gibbs_truncated_sampler(problem, n_iter, thin, s)
        log(
            {
                "kind": "expectation",
                "method": "gibbs",
                "dimension": d,
                "replication": rep_idx,
                "seed": s,
                "iterations": n_iter,
                "estimate": chain.flat().mean(axis=0).tolist(),
                "lag1_acf": chain.acf[0].tolist(),
                "wall_seconds": time.perf_counter() - t0 if cfg.timing else 0.0,
            }
        )


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> tuple[Path, Path]:
    """Run ``cfg`` and return the paths of ``runs.jsonl`` and ``summary.csv``."""
    out_dir = Path(out if out is not None else cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs_path, summary_path = out_dir / "runs.jsonl", out_dir / "summary.csv"
    records: list[dict[str, Any]] = []
    with open(runs_path, "w") as fh:

        def log(rec):
            records.append(rec)
            fh.write(json.dumps(rec) + "\n")

        for d in cfg.dims:
            problem = build_problem(cfg, d)
            if cfg.experiment == "expectation":
                _expectation_records(cfg, problem, d, log)
                continue
            specs = list(cfg.methods)
            if cfg.equal_compute and len(specs) > 1:
                counts = calibrate_particles(lambda sp, sd: run_method(problem, sp, sd, cfg.ordering), specs, cfg.seed)
                specs = [replace(sp, M=m) for sp, m in zip(specs, counts)]
                log({"kind": "calibration", "dimension": d, "methods": [sp.label() for sp in specs], "M": counts})
            for k, spec in enumerate(specs):
                for rep_idx, s in enumerate(_seeds(cfg.seed, d, k, cfg.R)):
                    report = run_method(problem, spec, s, cfg.ordering)
                    rec = {"kind": "run", "experiment": cfg.experiment, "method": spec.label(), "dimension": d, "replication": rep_idx}
                    rec.update(report.to_dict(timing=cfg.timing))
                    log(rec)
    _write_summary(summary_path, summary_rows(records))
    return runs_path, summary_path
