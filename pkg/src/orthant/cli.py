"""Command-line front end.

Exit codes: 0 on success, 2 when a run ends with a dead particle system,
1 on usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .estimators import RunConfig, ghk, smc
from .expectations import gibbs_truncated_sampler, to_original, weighted_expectation, write_samples_csv
from .experiments import ConfigError, ExperimentConfig, run_experiment
from .moves import MoveConfig
from .problem import Ar1Spec, OrthantProblem, ProbitPanelSpec, gen_ar1_problem, gen_cauchy_problem, gen_probit_panel, gen_thurstonian
from .student import StudentOrthantProblem, smc_student

EXIT_OK, EXIT_USAGE, EXIT_DEAD = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _move(text: str):
    try:
        return MoveConfig.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("ghk", "pf", "smc"), default="smc")
    p.add_argument("--move", type=_move, default=MoveConfig(), metavar="{none|gibbs|overrelax|hmc|block:L}")
    p.add_argument("--particles", type=int, default=1000)
    p.add_argument("--ess", type=float, default=0.5, help="resampling threshold as a fraction of M")
    p.add_argument("--ordering", type=_on_off, default=True, metavar="{on|off}")
    p.add_argument("--nu", type=float, default=None, help="Student degrees of freedom")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="orthant", description="Gaussian and Student orthant probabilities by GHK, PF and SMC.")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a problem JSON document")
    g.add_argument("kind", choices=("cauchy", "ar1", "thurstone", "probit"))
    g.add_argument("--dim", type=int, required=True, help="dimension (T for ar1/probit, p for thurstone)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rho", type=float, default=0.7)
    g.add_argument("--b", type=float, default=15.0, help="upper bound of the ar1 box")
    g.add_argument("--choices", type=int, default=3, help="number of alternatives (probit)")
    g.add_argument("--nu", type=float, default=None)
    g.add_argument("--out", type=Path, default=None)

    e = sub.add_parser("estimate", help="estimate one problem")
    e.add_argument("problem", type=Path)
    _add_run_flags(e)
    e.add_argument("--replications", type=int, default=1)
    e.add_argument("--no-timing", action="store_true", help="write wall_seconds as 0 for reproducible output")
    e.add_argument("--out", type=Path, default=None)

    x = sub.add_parser("experiment", help="run an experiment config")
    x.add_argument("config", type=Path)
    x.add_argument("--seed", type=int, default=None)
    x.add_argument("--replications", type=int, default=None)
    x.add_argument("--out", type=Path, default=None)

    q = sub.add_parser("expectation", help="moments of the truncated law")
    q.add_argument("problem", type=Path)
    _add_run_flags(q)
    q.add_argument("--sampler", choices=("smc", "gibbs"), default="smc")
    q.add_argument("--iterations", type=int, default=10000)
    q.add_argument("--thin", type=int, default=1)
    q.add_argument("--out", type=Path, default=None, help="CSV of Gibbs draws")
    return parser


def _load_problem(path: Path, nu: float | None):
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    try:
        base = OrthantProblem.from_dict(doc)
    except (ValueError, KeyError, TypeError, np.linalg.LinAlgError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    nu = nu if nu is not None else doc.get("nu")
    return StudentOrthantProblem(base, float(nu)) if nu is not None else base


def _estimate_once(problem, args, seed):
    student = isinstance(problem, StudentOrthantProblem)
    if args.method == "ghk" and not student:
        return ghk(problem, args.particles, ordering=args.ordering, seed=seed)
    if args.method == "ghk":
        cfg = RunConfig(M=args.particles, ess_threshold=0.0, move=None, ordering=args.ordering, seed=seed, keep_sample=False)
    else:
        move = None if args.method == "pf" else args.move
        cfg = RunConfig(M=args.particles, ess_threshold=args.ess, move=move, ordering=args.ordering, seed=seed, keep_sample=False)
    return smc_student(problem, cfg) if student else smc(problem, cfg)


def _cmd_generate(args) -> int:
    if args.kind == "cauchy":
        prob = gen_cauchy_problem(args.dim, args.seed)
    elif args.kind == "ar1":
        prob = gen_ar1_problem(Ar1Spec(T=args.dim, rho=args.rho, b=args.b))
    elif args.kind == "thurstone":
        prob = gen_thurstonian(np.zeros(args.dim))
    else:
        prob = gen_probit_panel(ProbitPanelSpec(J=args.choices, T=args.dim, rho=args.rho), args.seed)
    doc = StudentOrthantProblem(prob, args.nu).to_dict() if args.nu is not None else prob.to_dict()
    text = json.dumps(doc)
    if args.out is None:
        print(text)
    else:
        args.out.write_text(text + "\n")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    if args.particles < 2 or args.replications < 1:
        raise UsageError("--particles must be >= 2 and --replications >= 1")
    problem = _load_problem(args.problem, args.nu)
    if args.replications == 1:
        seeds = [args.seed]
    else:
        ss = np.random.SeedSequence(args.seed)
        seeds = [int(c.generate_state(1)[0]) for c in ss.spawn(args.replications)]
    lines, dead = [], False
    for s in seeds:
        rep = _estimate_once(problem, args, s)
        dead |= rep.failed
        lines.append(rep.to_json(timing=not args.no_timing))
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    if dead:
        print("dead particle system: all weights are zero", file=sys.stderr)
        return EXIT_DEAD
    return EXIT_OK


def _cmd_experiment(args) -> int:
    try:
        doc = json.loads(args.config.read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: line {exc.lineno}: {exc.msg}") from None
    if isinstance(doc, dict):
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.replications is not None:
            doc["R"] = args.replications
    try:
        cfg = ExperimentConfig.from_dict(doc)
    except ConfigError as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    runs, summary = run_experiment(cfg, args.out)
    print(json.dumps({"runs": str(runs), "summary": str(summary)}))
    return EXIT_OK


def _cmd_expectation(args) -> int:
    problem = _load_problem(args.problem, args.nu)
    if args.sampler == "gibbs":
        chain = gibbs_truncated_sampler(problem, args.iterations, args.thin, args.seed)
        if args.out is not None:
            write_samples_csv(args.out, chain.flat(), None if chain.u is None else chain.u.reshape(-1))
        print(json.dumps({"sampler": "gibbs", "eta_mean": chain.flat().mean(axis=0).tolist(), "lag1_acf": chain.acf[0].tolist(), **chain.diagnostics}))
        return EXIT_OK
    move = None if args.method == "pf" else args.move
    thr = 0.0 if args.method == "ghk" else args.ess
    cfg = RunConfig(M=args.particles, ess_threshold=thr, move=None if args.method == "ghk" else move, ordering=args.ordering, seed=args.seed)
    student = isinstance(problem, StudentOrthantProblem)
    rep = smc_student(problem, cfg) if student else smc(problem, cfg)
    if rep.failed:
        print("dead particle system: all weights are zero", file=sys.stderr)
        return EXIT_DEAD
    base = problem.base if student else problem
    y = to_original(rep.sample, base.mean)
    w = rep.sample.weights
    print(json.dumps({"sampler": "smc", "log_prob": rep.log_prob, "y_mean": (w @ y).tolist(), "eta_mean": weighted_expectation(rep.sample).tolist()}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code is None else int(exc.code)
    handler = {"generate": _cmd_generate, "estimate": _cmd_estimate, "experiment": _cmd_experiment, "expectation": _cmd_expectation}[args.verb]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"orthant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
