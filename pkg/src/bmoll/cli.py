"""Command-line interface: single runs, named suites, front sweeps, and the
oracle verification table.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from ._version import __version__
from .drivers import pareto_front
from .errors import NumericalError
from .harness import SUITES, RunConfig, run_experiment
from .problems import PROBLEM_KEYS, problem_from_key
from .stepsize import StepsizeRule

SEED_ENV = "BMOLL_SEED"


def _parse_rule(text: str) -> StepsizeRule:
    if text == "armijo":
        return StepsizeRule.armijo()
    try:
        return StepsizeRule.fixed(float(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"stepsize must be 'armijo' or a positive number, got {text!r}"
        ) from exc


def _default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bmoll",
        description="Benchmark harness for bilevel problems with a "
        "multi-objective lower level.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single experiment configuration")
    run.add_argument("--problem", required=True, choices=PROBLEM_KEYS)
    run.add_argument("--nbar", type=int, default=1, help="problem dimension")
    run.add_argument("--algo", required=True, choices=("opt", "rn", "ra"))
    run.add_argument("--ul-step", type=_parse_rule, default="armijo",
                     help="'armijo' or a fixed value (default armijo)")
    run.add_argument("--ll-step", type=_parse_rule, default="armijo")
    run.add_argument("--N", type=int, default=500, dest="n_grid",
                     help="weight-grid size for the risk-neutral driver")
    run.add_argument("--Q", type=int, default=None, dest="batch_size",
                     help="mini-batch size (default: N when nbar is 1, else 20)")
    run.add_argument("--sigma-grad", type=float, default=0.0)
    run.add_argument("--sigma-hess", type=float, default=0.0)
    run.add_argument("--trials", type=int, default=1)
    run.add_argument("--seed", type=int, default=None,
                     help=f"base seed (falls back to ${SEED_ENV}, then 0)")
    run.add_argument("--data-seed", type=int, default=None,
                     help="seed for randomized problem data (default: base seed)")
    run.add_argument("--iters", type=int, default=None,
                     help="iteration budget (default 200 when nbar is 1, else 500)")
    run.add_argument("--eval-every", type=int, default=1)
    run.add_argument("--fix-init", action="store_true",
                     help="pin the initial point across trials")
    run.add_argument("--front-points", type=int, default=200)
    run.add_argument("--jobs", type=int, default=None,
                     help="parallel trial workers (default: logical cores)")
    run.add_argument("--multistart", type=int, default=0,
                     help="extra random starts for the inner maximization")
    run.add_argument("--out", required=True)

    suite = sub.add_parser("suite", help="run a named experiment suite")
    suite.add_argument("name", choices=sorted(SUITES))
    suite.add_argument("--out", required=True)
    suite.add_argument("--seed", type=int, default=None)
    suite.add_argument("--nbar", type=int, default=None)
    suite.add_argument("--trials", type=int, default=None)
    suite.add_argument("--iters", type=int, default=None)

    front = sub.add_parser("pareto", help="sweep a Pareto front at a given x")
    front.add_argument("--problem", required=True, choices=PROBLEM_KEYS)
    front.add_argument("--nbar", type=int, default=1)
    front.add_argument("--x", required=True,
                       help="comma-separated upper-level point")
    front.add_argument("--M", type=int, default=200)
    front.add_argument("--data-seed", type=int, default=0)
    front.add_argument("--out", required=True)

    ver = sub.add_parser("verify", help="run the oracle checks and print a table")
    ver.add_argument("--fast", action="store_true", help="trimmed sample counts")
    return ap


def _cmd_run(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    config = RunConfig(
        problem=args.problem,
        n_bar=args.nbar,
        algo=args.algo,
        ul_rule=args.ul_step if isinstance(args.ul_step, StepsizeRule) else _parse_rule(args.ul_step),
        ll_rule=args.ll_step if isinstance(args.ll_step, StepsizeRule) else _parse_rule(args.ll_step),
        n_grid=args.n_grid,
        batch_size=args.batch_size,
        sigma_grad=args.sigma_grad,
        sigma_hess=args.sigma_hess,
        trials=args.trials,
        seed=seed,
        data_seed=args.data_seed,
        iterations=args.iters,
        eval_every=args.eval_every,
        fix_init=args.fix_init,
        front_points=args.front_points,
        jobs=args.jobs,
        ra_extra_starts=args.multistart,
    )
    result = run_experiment(config, args.out)
    finals = result.aggregate.trial_finals
    print(f"wrote {result.out_dir} (final value mean {finals.mean():.6g}"
          f"{'' if len(finals) == 1 else f' over {len(finals)} trials'})")
    if result.failures:
        print(f"warning: {len(result.failures)} trial(s) failed; see manifest.json")
    return 0


def _cmd_suite(args) -> int:
    kwargs = {}
    if args.seed is not None:
        kwargs["seed"] = args.seed
    elif os.environ.get(SEED_ENV):
        kwargs["seed"] = int(os.environ[SEED_ENV])
    if args.nbar is not None:
        kwargs["n_bar"] = args.nbar
    if args.trials is not None:
        kwargs["trials"] = args.trials
    if args.iters is not None:
        kwargs["iterations"] = args.iters
    fn = SUITES[args.name]
    import inspect

    allowed = set(inspect.signature(fn).parameters)
    bad = set(kwargs) - allowed
    if bad:
        print(f"suite {args.name} does not accept: {', '.join(sorted(bad))}",
              file=sys.stderr)
        return 1
    fn(args.out, **kwargs)
    print(f"suite {args.name} written to {args.out}")
    return 0


def _cmd_pareto(args) -> int:
    try:
        x = np.array([float(v) for v in args.x.split(",")])
    except ValueError:
        print(f"could not parse --x {args.x!r}", file=sys.stderr)
        return 1
    p = problem_from_key(args.problem, args.nbar, args.data_seed)
    sample = pareto_front(p, x, M=args.M)
    import csv
    from pathlib import Path

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("lambda1", "f1", "f2"))
        for l, a, b in zip(sample.lam1, sample.f1, sample.f2):
            w.writerow((repr(float(l)), repr(float(a)), repr(float(b))))
    print(f"wrote {out} ({sample.lam1.size} points, {len(sample.skipped)} skipped)")
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(fast=args.fast)
    for r in results:
        print(r.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return 0 if n_fail == 0 else 2


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "suite":
            return _cmd_suite(args)
        if args.command == "pareto":
            return _cmd_pareto(args)
        if args.command == "verify":
            return _cmd_verify(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
