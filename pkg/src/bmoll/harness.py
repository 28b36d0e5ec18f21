"""Experiment harness: run configuration, multi-trial execution with
confidence intervals, and file outputs (CSV traces, Pareto fronts, manifest).

Output schema (all under the configured output directory):

* ``trace.csv``        -- header ``iter,time_s,f_true,trial``; one row per
  recorded iteration per completed trial.
* ``trace_frn.csv``    -- same schema; risk-neutral evaluator along
  risk-averse iterates (written for ``ra`` runs when enabled).
* ``aggregate.csv``    -- header ``iter,f_mean,ci95,t_mean,n_trials``; the 95%
  half-width is 1.96 * sample std / sqrt(trials).
* ``front.csv``        -- header ``lambda1,f1,f2``; front sweep at the final
  iterate of trial 0.
* ``front_meta.json``  -- final iterate, marked front point (optimistic /
  pessimistic runs), and sweep metadata.
* ``surface.csv``      -- header ``x,y,f_u``; upper-level objective on a grid
  (written only for one-dimensional problems).
* ``pareto_set.csv``   -- header ``lambda1,y``; minimizer sweep at the final
  iterate (one-dimensional problems).
* ``manifest.json``    -- full config echo, package version, per-trial seeds
  and final values, and any per-trial failures.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ._version import __version__ as _pkg_version
from .core import STREAM_NOISE, RngStream
from .drivers import RUNNERS, DriverConfig, RunTrace, pareto_front
from .errors import NumericalError
from .lower import solve_ll_accurate
from .noise import NoiseSpec
from .problems import PROBLEM_KEYS, problem_from_key
from .stepsize import StepsizeRule

TRACE_HEADER = ("iter", "time_s", "f_true", "trial")
AGGREGATE_HEADER = ("iter", "f_mean", "ci95", "t_mean", "n_trials")
FRONT_HEADER = ("lambda1", "f1", "f2")
SURFACE_HEADER = ("x", "y", "f_u")
PARETO_SET_HEADER = ("lambda1", "y")

#: Resolution of the exported objective surface for one-dimensional problems.
SURFACE_GRID = 400


def _rule_to_json(rule: StepsizeRule) -> dict:
    d = {"kind": rule.kind}
    if rule.kind == "fixed":
        d["fixed_value"] = rule.fixed_value
    else:
        ap = rule.armijo_params
        d.update(
            initial=ap.initial,
            contraction=ap.contraction,
            sufficient_decrease=ap.sufficient_decrease,
            max_backtracks=ap.max_backtracks,
        )
    return d


def _rule_from_json(d: dict) -> StepsizeRule:
    if d["kind"] == "fixed":
        return StepsizeRule.fixed(d["fixed_value"])
    return StepsizeRule.armijo(
        d.get("initial", 1.0),
        d.get("contraction", 0.5),
        d.get("sufficient_decrease", 1e-4),
        d.get("max_backtracks", 30),
    )


@dataclass(frozen=True)
class RunConfig:
    """Full description of one experiment (one problem, one algorithm,
    possibly many trials)."""

    problem: str
    n_bar: int
    algo: str
    ul_rule: StepsizeRule = field(default_factory=StepsizeRule.armijo)
    ll_rule: StepsizeRule = field(default_factory=StepsizeRule.armijo)
    n_grid: int = 500
    batch_size: Optional[int] = None
    sigma_grad: float = 0.0
    sigma_hess: float = 0.0
    trials: int = 1
    seed: int = 0
    data_seed: Optional[int] = None
    iterations: Optional[int] = None
    eval_every: int = 1
    fix_init: bool = False
    front_points: int = 200
    jobs: Optional[int] = None
    ra_probe_points: int = 9
    ra_extra_starts: int = 0
    ra_record_rn: bool = True

    def __post_init__(self):
        if self.problem not in PROBLEM_KEYS:
            raise ValueError(f"unknown problem {self.problem!r}; expected {PROBLEM_KEYS}")
        if self.algo not in ("opt", "rn", "ra"):
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.n_bar < 1:
            raise ValueError("n_bar must be >= 1")

    @property
    def resolved_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return 200 if self.n_bar == 1 else 500

    @property
    def resolved_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return self.n_grid if self.n_bar == 1 else 20

    @property
    def resolved_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    @property
    def resolved_jobs(self) -> int:
        """Worker-pool size: the configured value, defaulting to logical cores
        (never more workers than trials)."""
        if self.jobs is not None and self.jobs > 0:
            return min(self.jobs, self.trials)
        return min(os.cpu_count() or 1, self.trials)

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ul_rule"] = _rule_to_json(self.ul_rule)
        d["ll_rule"] = _rule_to_json(self.ll_rule)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["ul_rule"] = _rule_from_json(d["ul_rule"])
        d["ll_rule"] = _rule_from_json(d["ll_rule"])
        return cls(**d)


@dataclass
class AggregateTrace:
    """Across-trial mean curve with normal-approximation 95% half-widths."""

    iters: np.ndarray
    f_mean: np.ndarray
    ci95: np.ndarray
    t_mean: np.ndarray
    trial_finals: np.ndarray
    n_trials: int


@dataclass
class ExperimentResult:
    config: RunConfig
    traces: list
    aggregate: AggregateTrace
    out_dir: Optional[Path]
    failures: list


def driver_config_for_trial(config: RunConfig, trial: int) -> DriverConfig:
    trial_seed = config.seed + trial
    noise = NoiseSpec(
        config.sigma_grad, config.sigma_hess, RngStream(trial_seed, STREAM_NOISE)
    )
    return DriverConfig(
        iterations=config.resolved_iterations,
        ul_rule=config.ul_rule,
        ll_rule=config.ll_rule,
        noise=noise,
        seed=trial_seed,
        n_grid=config.n_grid,
        batch_size=config.resolved_batch_size if config.algo == "rn" else None,
        eval_every=config.eval_every,
        fix_init_seed=config.seed if config.fix_init else None,
        ra_probe_points=config.ra_probe_points,
        ra_extra_starts=config.ra_extra_starts,
        ra_record_rn=config.ra_record_rn,
    )


def run_single_trial(config: RunConfig, trial: int) -> RunTrace:
    """Run one seeded trial of the configured experiment."""
    p = problem_from_key(config.problem, config.n_bar, config.resolved_data_seed)
    cfg = driver_config_for_trial(config, trial)
    return RUNNERS[config.algo](p, cfg)


def aggregate_traces(traces: list) -> AggregateTrace:
    iters = np.asarray(traces[0].iters, dtype=int)
    for t in traces[1:]:
        if not np.array_equal(np.asarray(t.iters, dtype=int), iters):
            raise ValueError("trials recorded different iteration grids")
    F = np.array([t.f_true for t in traces], dtype=float)
    T = np.array([t.time_s for t in traces], dtype=float)
    n = len(traces)
    mean = F.mean(axis=0)
    if n > 1:
        ci = 1.96 * F.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        ci = np.zeros_like(mean)
    return AggregateTrace(
        iters=iters,
        f_mean=mean,
        ci95=ci,
        t_mean=T.mean(axis=0),
        trial_finals=F[:, -1].copy(),
        n_trials=n,
    )


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_trace_csv(path: Path, traces: list, trial_ids: list, aux: bool = False):
    rows = []
    for t, tid in zip(traces, trial_ids):
        series = t.f_rn_aux if aux else t.f_true
        for i, it in enumerate(t.iters):
            rows.append((it, repr(t.time_s[i]), repr(float(series[i])), tid))
    _write_csv(path, TRACE_HEADER, rows)


def read_trace_csv(path) -> dict:
    """Read a trace CSV back into arrays keyed by column name."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        cols = {k: [] for k in header}
        for row in r:
            cols["iter"].append(int(row[0]))
            cols["time_s"].append(float(row[1]))
            cols["f_true"].append(float(row[2]))
            cols["trial"].append(int(row[3]))
    return {k: np.asarray(v) for k, v in cols.items()}


def _export_solution_space(p, out_dir: Path, finals: dict, front_sample):
    """Objective surface plus minimizer sweep for one-dimensional problems."""
    xs = [v for v in finals.values() if v is not None]
    x_lo = min(min(v[0] for v in xs) - 4.0, -4.0)
    x_hi = max(max(v[0] for v in xs) + 4.0, 4.0)
    lo, hi = p.ul_box.lower[0], p.ul_box.upper[0]
    if np.isfinite(lo):
        x_lo = max(x_lo, lo - 1.0)
    if np.isfinite(hi):
        x_hi = min(x_hi, hi + 1.0)
    y_vals = front_sample.Y[:, 0]
    y_lo, y_hi = float(y_vals.min()) - 2.0, float(y_vals.max()) + 2.0
    gx = np.linspace(x_lo, x_hi, SURFACE_GRID)
    gy = np.linspace(y_lo, y_hi, SURFACE_GRID)
    rows = []
    for xv in gx:
        vals = p.f_u_batch(np.array([xv]), gy[:, None]) if p.f_u_batch is not None else [
            p.f_u(np.array([xv]), np.array([yv])) for yv in gy
        ]
        rows.extend((repr(float(xv)), repr(float(yv)), repr(float(fv)))
                    for yv, fv in zip(gy, vals))
    _write_csv(out_dir / "surface.csv", SURFACE_HEADER, rows)
    _write_csv(
        out_dir / "pareto_set.csv",
        PARETO_SET_HEADER,
        [(repr(float(l)), repr(float(y))) for l, y in zip(front_sample.lam1, front_sample.Y[:, 0])],
    )


def run_experiment(config: RunConfig, out_dir=None) -> ExperimentResult:
    """Execute ``config.trials`` seeded runs, aggregate them, and (optionally)
    write the documented artifact files under ``out_dir``.

    Trial failures are recorded in the manifest; aggregation proceeds over
    the completed trials.  Raises if every trial fails.
    """
    traces: list = []
    trial_ids: list = []
    failures: list = []
    jobs = config.resolved_jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {t: pool.submit(run_single_trial, config, t) for t in range(config.trials)}
            for t in range(config.trials):
                try:
                    traces.append(futs[t].result())
                    trial_ids.append(t)
                except NumericalError as exc:
                    failures.append({"trial": t, "error": str(exc)})
    else:
        for t in range(config.trials):
            try:
                traces.append(run_single_trial(config, t))
                trial_ids.append(t)
            except NumericalError as exc:
                failures.append({"trial": t, "error": str(exc)})
    if not traces:
        raise NumericalError(f"all {config.trials} trials failed: {failures}")
    agg = aggregate_traces(traces)

    out_path: Optional[Path] = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        write_trace_csv(out_path / "trace.csv", traces, trial_ids)
        if config.algo == "ra" and traces[0].f_rn_aux is not None:
            write_trace_csv(out_path / "trace_frn.csv", traces, trial_ids, aux=True)
        _write_csv(
            out_path / "aggregate.csv",
            AGGREGATE_HEADER,
            [
                (int(it), repr(float(m)), repr(float(c)), repr(float(tm)), agg.n_trials)
                for it, m, c, tm in zip(agg.iters, agg.f_mean, agg.ci95, agg.t_mean)
            ],
        )
        artifact_errors = []
        try:
            _write_front_outputs(config, traces[0], out_path)
        except NumericalError as exc:
            # A final iterate can be too degenerate to sweep (e.g. heavily
            # noise-driven divergence); record instead of failing the run.
            artifact_errors.append(f"front sweep skipped: {exc}")
        manifest = {
            "config": config.to_json_dict(),
            "version": _pkg_version,
            "trial_seeds": [config.seed + t for t in trial_ids],
            "trial_final_values": [float(t.f_true[-1]) for t in traces],
            "failures": failures,
            "artifact_errors": artifact_errors,
        }
        with open(out_path / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return ExperimentResult(config, traces, agg, out_path, failures)


def _write_front_outputs(config: RunConfig, trace: RunTrace, out_path: Path):
    p = problem_from_key(config.problem, config.n_bar, config.resolved_data_seed)
    if p.q != 2:
        return
    mark_y = None
    mark_kind = None
    if config.algo == "opt" and trace.final_lambda is not None:
        mark_y = solve_ll_accurate(p, trace.final_x, trace.final_lambda,
                                   np.zeros(p.m), tol=1e-10)
        mark_kind = "optimistic"
    elif config.algo == "ra" and trace.final_inner is not None:
        mark_y = trace.final_inner.y
        mark_kind = "pessimistic"
    sample = pareto_front(p, trace.final_x, M=config.front_points, mark_y=mark_y)
    _write_csv(
        out_path / "front.csv",
        FRONT_HEADER,
        [
            (repr(float(l)), repr(float(a)), repr(float(b)))
            for l, a, b in zip(sample.lam1, sample.f1, sample.f2)
        ],
    )
    meta = {
        "problem": config.problem,
        "algo": config.algo,
        "final_x": [float(v) for v in trace.final_x],
        "final_lambda": None
        if trace.final_lambda is None
        else [float(v) for v in trace.final_lambda],
        "mark_kind": mark_kind,
        "mark": None if sample.mark is None else [float(sample.mark[0]), float(sample.mark[1])],
        "skipped_weights": list(sample.skipped),
    }
    with open(out_path / "front_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    if p.n == 1 and p.m == 1:
        finals = {config.algo: trace.final_x}
        _export_solution_space(p, out_path, finals, sample)


# -- named suites ------------------------------------------------------------

DET_SEP_PROBLEMS = ("jos1", "sp1", "gkv1-sep")
STOCH_SIGMAS = ((0.0, 0.0), (1.0, 0.1), (2.0, 0.2))
GRID_SEARCH_UL = (1.0, 0.1, 0.01, 0.001)
GRID_SEARCH_LL = (0.01, 0.001, 0.0001)


def suite_det_sep(out_dir, seed: int = 0, iterations: int = 200,
                  front_points: int = 200) -> dict:
    """Deterministic separable suite: three problems x three algorithms at
    dimension 1 with Armijo line searches at both levels."""
    out = Path(out_dir)
    results = {}
    for problem in DET_SEP_PROBLEMS:
        for algo in ("opt", "rn", "ra"):
            cfg = RunConfig(
                problem=problem, n_bar=1, algo=algo,
                ul_rule=StepsizeRule.armijo(), ll_rule=StepsizeRule.armijo(),
                trials=1, seed=seed, iterations=iterations,
                front_points=front_points,
            )
            results[(problem, algo)] = run_experiment(cfg, out / problem / algo)
    return results


def suite_det_nonsep(out_dir, seed: int = 0, n_bar: int = 50,
                     iterations: int = 500) -> dict:
    """Deterministic non-separable suite: random-SPD quadratic family."""
    out = Path(out_dir)
    results = {}
    for algo in ("opt", "rn", "ra"):
        cfg = RunConfig(
            problem="gkv1-nonsep", n_bar=n_bar, algo=algo,
            ul_rule=StepsizeRule.armijo(), ll_rule=StepsizeRule.armijo(),
            trials=1, seed=seed, iterations=iterations,
        )
        results[algo] = run_experiment(cfg, out / algo)
    return results


def suite_q_sweep(out_dir, seed: int = 16, n_bar: int = 10, n_grid: int = 500,
                  qs=(10, 20, 40, 500), trials: int = 10,
                  iterations: int = 100) -> dict:
    """Mini-batch size sweep for the risk-neutral driver.

    The default seed selects a problem instance whose optimistic value is
    bounded below on the feasible cone (most draws of this family are not;
    see suite_stoch_nonsep), keeping the suites on one instance.
    """
    out = Path(out_dir)
    results = {}
    for Q in qs:
        cfg = RunConfig(
            problem="gkv1-nonsep", n_bar=n_bar, algo="rn",
            ul_rule=StepsizeRule.armijo(), ll_rule=StepsizeRule.armijo(),
            n_grid=n_grid, batch_size=Q, trials=trials, seed=seed,
            iterations=iterations,
        )
        results[Q] = run_experiment(cfg, out / f"Q{Q}")
    return results


def suite_stoch_nonsep(out_dir, seed: int = 16, n_bar: int = 10, trials: int = 10,
                       iterations: int = 150, sigmas=STOCH_SIGMAS) -> dict:
    """Stochastic suite: Gaussian oracle noise at three magnitudes, fixed
    stepsizes (0.1 upper level, 1.0 for the risk-neutral driver, 0.001 lower
    level).

    The default seed picks an instance that is strictly copositive on the
    feasible cone, so the optimistic value is bounded below and noisy
    excursions degrade it rather than escaping to -inf (most draws of this
    synthetic family are unbounded below in the optimistic formulation).
    """
    out = Path(out_dir)
    results = {}
    for algo in ("opt", "rn", "ra"):
        for sg, sh in sigmas:
            ul = StepsizeRule.fixed(1.0 if algo == "rn" else 0.1)
            cfg = RunConfig(
                problem="gkv1-nonsep", n_bar=n_bar, algo=algo,
                ul_rule=ul, ll_rule=StepsizeRule.fixed(0.001),
                sigma_grad=sg, sigma_hess=sh, trials=trials, seed=seed,
                iterations=iterations,
            )
            tag = f"sg{sg:g}_sh{sh:g}"
            results[(algo, sg, sh)] = run_experiment(cfg, out / algo / tag)
    return results


def suite_grid_search(out_dir, seed: int = 0, n_bar: int = 10, trials: int = 3,
                      iterations: int = 100, sigma_grad: float = 1.0,
                      sigma_hess: float = 0.1) -> dict:
    """Stepsize grid search over the fixed upper/lower stepsize grids."""
    out = Path(out_dir)
    results = {}
    rows = []
    for algo in ("opt", "rn", "ra"):
        for ul in GRID_SEARCH_UL:
            for ll in GRID_SEARCH_LL:
                cfg = RunConfig(
                    problem="gkv1-nonsep", n_bar=n_bar, algo=algo,
                    ul_rule=StepsizeRule.fixed(ul), ll_rule=StepsizeRule.fixed(ll),
                    sigma_grad=sigma_grad, sigma_hess=sigma_hess,
                    trials=trials, seed=seed, iterations=iterations,
                )
                tag = f"ul{ul:g}_ll{ll:g}"
                try:
                    res = run_experiment(cfg, out / algo / tag)
                except NumericalError as exc:
                    rows.append((algo, ul, ll, "nan", "nan", f"failed: {exc}"))
                    continue
                results[(algo, ul, ll)] = res
                rows.append(
                    (
                        algo, ul, ll,
                        repr(float(res.aggregate.trial_finals.mean())),
                        repr(float(res.aggregate.ci95[-1])),
                        "ok",
                    )
                )
    _write_csv(Path(out_dir) / "grid_search.csv",
               ("algo", "ul_step", "ll_step", "mean_final", "ci95_final", "status"), rows)
    return results


SUITES = {
    "det-sep": suite_det_sep,
    "det-nonsep": suite_det_nonsep,
    "q-sweep": suite_q_sweep,
    "stoch-nonsep": suite_stoch_nonsep,
    "grid-search": suite_grid_search,
}
