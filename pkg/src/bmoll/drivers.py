"""Upper-level iteration loops for the three formulations, true-function
evaluators, Pareto-front sweeps, and stationarity diagnostics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adjoint import bsg_opt_direction, bsg_rn_direction
from .core import (
    STREAM_BATCH,
    STREAM_GRID,
    STREAM_INIT_X,
    STREAM_INIT_Y,
    Array,
    BoxSet,
    RngStream,
    as_vector,
    project_box,
    project_simplex,
    sample_weight_grid,
)
from .errors import DivergenceError, LLSolveError
from .lower import LLBudget, solve_ll, solve_ll_accurate, solve_ll_grid, update_accuracy
from .noise import NoiseSpec
from .problems import BilevelProblem
from .riskaverse import InnerMaxSolution, ra_subgradient, solve_inner_max
from .stepsize import StepsizeRule, armijo_search

#: Increasing-accuracy thresholds on the upper-level objective difference.
OPT_ACCURACY_THRESHOLD = 0.1
RN_ACCURACY_THRESHOLD = 0.9

FORMULATIONS = ("opt", "rn", "ra")


@dataclass
class DriverConfig:
    """Everything one driver run needs besides the problem itself."""

    iterations: int
    ul_rule: StepsizeRule
    ll_rule: StepsizeRule
    noise: NoiseSpec | None = None
    seed: int = 0
    n_grid: int = 500
    batch_size: int | None = None
    eval_every: int = 1
    ll_max_iters: int = 30
    ll_threshold: float | None = None
    fix_init_seed: int | None = None
    x0: Optional[Array] = None
    lam0: Optional[Array] = None
    y0: Optional[Array] = None
    ra_probe_points: int = 9
    ra_extra_starts: int = 0
    ra_record_rn: bool = True
    true_ll_tol: float = 1e-8
    inner_tol: float = 1e-6
    record_iterates: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.batch_size is not None and not 1 <= self.batch_size <= self.n_grid:
            raise ValueError("batch_size must satisfy 1 <= Q <= N")


@dataclass
class RunTrace:
    """Per-iteration history of one driver run (recorded at evaluation
    iterations; contiguous from 0 when eval_every is 1)."""

    problem: str
    algo: str
    iters: list = field(default_factory=list)
    time_s: list = field(default_factory=list)
    f_true: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    ll_iters: list = field(default_factory=list)
    dir_norm: list = field(default_factory=list)
    step_ok: list = field(default_factory=list)
    f_rn_aux: list | None = None
    iterates: list | None = None
    final_x: Optional[Array] = None
    final_lambda: Optional[Array] = None
    final_y: Optional[Array] = None
    final_inner: Optional[InnerMaxSolution] = None

    def record(self, k, t, f, alpha, ll_iters, dn, ok, f_aux=None):
        self.iters.append(int(k))
        self.time_s.append(float(t))
        self.f_true.append(float(f))
        self.alpha.append(float(alpha))
        self.ll_iters.append(int(ll_iters))
        self.dir_norm.append(float(dn))
        self.step_ok.append(bool(ok))
        if self.f_rn_aux is not None and f_aux is not None:
            self.f_rn_aux.append(float(f_aux))


class OptimisticValue:
    """f_u(x, y(x, lam)) with the weighted problem solved to ``ll_tol``,
    warm-started across calls."""

    def __init__(self, p: BilevelProblem, ll_tol: float = 1e-8):
        self.p = p
        self.ll_tol = ll_tol
        self._y = np.zeros(p.m)

    def __call__(self, x, lam) -> float:
        if self.p.ll_solution is not None:
            try:
                y = self.p.ll_solution(x, lam)
            except (ValueError, np.linalg.LinAlgError):
                y = solve_ll_accurate(self.p, x, lam, self._y, self.ll_tol)
        else:
            y = solve_ll_accurate(self.p, x, lam, self._y, self.ll_tol)
        self._y = y
        return float(self.p.f_u(as_vector(x, self.p.n), y))

    @property
    def last_y(self) -> Array:
        return self._y


class RiskNeutralValue:
    """Full-grid average of f_u(x, y(x, lam_i)) over a fixed weight grid."""

    def __init__(self, p: BilevelProblem, grid, ll_tol: float = 1e-8, y0=None):
        from .lower import solve_ll_grid_accurate

        self._solve = solve_ll_grid_accurate
        self.p = p
        self.grid = np.asarray(grid, dtype=float)
        self.ll_tol = ll_tol
        start = as_vector(y0, p.m) if y0 is not None else np.zeros(p.m)
        self._Y = np.tile(start, (self.grid.shape[0], 1))

    def __call__(self, x) -> float:
        self._Y = self._solve(self.p, x, self.grid, self._Y, tol=self.ll_tol)
        if self.p.f_u_batch is not None:
            vals = np.asarray(self.p.f_u_batch(as_vector(x, self.p.n), self._Y))
        else:
            vals = np.array([self.p.f_u(x, self._Y[k]) for k in range(self._Y.shape[0])])
        return float(vals.mean())


class RiskAverseValue:
    """Worst-case f_u over the stationarity manifold via the inner solver."""

    def __init__(self, p: BilevelProblem, tol: float = 1e-6, probe_points: int = 9,
                 extra_starts: int = 0):
        self.p = p
        self.tol = tol
        self.probe_points = probe_points
        self.extra_starts = extra_starts
        self.last: InnerMaxSolution | None = None

    def __call__(self, x) -> float:
        self.last = solve_inner_max(
            self.p, x, init=self.last, tol=self.tol,
            probe_points=self.probe_points, extra_starts=self.extra_starts,
        )
        return self.last.f_u_value


def true_value(
    p: BilevelProblem,
    formulation: str,
    x,
    lam=None,
    grid=None,
    ll_tol: float = 1e-8,
    inner_tol: float = 1e-6,
    probe_points: int = 9,
) -> float:
    """Noiseless objective of the requested formulation at a point.

    ``opt`` needs the weights ``lam``; ``rn`` needs the weight ``grid``.
    """
    if formulation == "opt":
        if lam is None:
            raise ValueError("the optimistic evaluator needs lam")
        return OptimisticValue(p, ll_tol)(x, lam)
    if formulation == "rn":
        if grid is None:
            raise ValueError("the risk-neutral evaluator needs a weight grid")
        return RiskNeutralValue(p, grid, ll_tol)(x)
    if formulation == "ra":
        return RiskAverseValue(p, inner_tol, probe_points)(x)
    raise ValueError(f"unknown formulation {formulation!r}; expected one of {FORMULATIONS}")


def _init_state(p: BilevelProblem, cfg: DriverConfig):
    seed_init = cfg.fix_init_seed if cfg.fix_init_seed is not None else cfg.seed
    from .problems import initial_point

    if cfg.x0 is not None:
        x = project_box(as_vector(cfg.x0, p.n), p.ul_box)
    else:
        x = initial_point(p.ul_box, RngStream(seed_init, STREAM_INIT_X))
    if cfg.y0 is not None:
        y = as_vector(cfg.y0, p.m).copy()
    else:
        y = initial_point(BoxSet.free(p.m), RngStream(seed_init, STREAM_INIT_Y))
    if cfg.lam0 is not None:
        lam = project_simplex(as_vector(cfg.lam0, p.q))
    else:
        lam = np.full(p.q, 1.0 / p.q)
    noise = cfg.noise if cfg.noise is not None else NoiseSpec.none()
    return x, y, lam, noise


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError("iterate became non-finite; aborting run")


def run_bsg_opt(p: BilevelProblem, cfg: DriverConfig) -> RunTrace:
    """Projected (stochastic) gradient loop on the optimistic formulation:
    per iteration a budgeted lower-level solve, one adjoint direction, and a
    joint projected update of (x, lam)."""
    t0 = time.perf_counter()
    x, y, lam, noise = _init_state(p, cfg)
    threshold = cfg.ll_threshold if cfg.ll_threshold is not None else OPT_ACCURACY_THRESHOLD
    budget = LLBudget(1, cfg.ll_max_iters, threshold, cfg.ll_rule)
    ev = OptimisticValue(p, cfg.true_ll_tol)
    trace = RunTrace(problem=p.name, algo="opt")
    if cfg.record_iterates:
        trace.iterates = [np.concatenate([x, lam])]
    f_curr = ev(x, lam)
    trace.record(0, time.perf_counter() - t0, f_curr, np.nan, budget.current_iters, np.nan, True)
    f_ctl_prev = None
    for k in range(1, cfg.iterations + 1):
        used = budget.current_iters
        y = solve_ll(p, x, lam, y, budget, noise)
        d_x, d_lam = bsg_opt_direction(p, x, lam, y, noise)
        _check_finite(d_x, d_lam)
        d = np.concatenate([d_x, d_lam])
        dn = float(np.linalg.norm(d))
        if cfg.ul_rule.kind == "armijo":
            # Search along the projected direction: the chord toward the
            # projected full step stays feasible and its norm measures the
            # movement the projection actually allows.
            z = np.concatenate([x, lam])
            step = np.concatenate([
                project_box(x + d_x, p.ul_box) - x,
                project_simplex(lam + d_lam) - lam,
            ])

            def f_eval(zz):
                return ev(project_box(zz[: p.n], p.ul_box), project_simplex(zz[p.n:]))

            res = armijo_search(f_eval, z, step, cfg.ul_rule, f0=f_curr)
            if res.accepted:
                alpha = res.alpha
                x = project_box(x + alpha * step[: p.n], p.ul_box)
                lam = project_simplex(lam + alpha * step[p.n:])
                f_new = res.f_new
            else:
                alpha, f_new = 0.0, f_curr
            evaluated, ok = True, res.accepted
        else:
            alpha, ok = cfg.ul_rule.fixed_value, True
            x = project_box(x + alpha * d_x, p.ul_box)
            lam = project_simplex(lam + alpha * d_lam)
            _check_finite(x, lam)
            evaluated = (k % cfg.eval_every == 0) or (k == cfg.iterations)
            f_new = ev(x, lam) if evaluated else f_curr
        f_ctl = p.f_u(x, y)
        if f_ctl_prev is not None:
            budget = update_accuracy(budget, f_ctl_prev, f_ctl)
        f_ctl_prev = f_ctl
        if cfg.record_iterates:
            trace.iterates.append(np.concatenate([x, lam]))
        if evaluated:
            trace.record(k, time.perf_counter() - t0, f_new, alpha, used, dn, ok)
            f_curr = f_new
    if cfg.iterations > 0:
        y = solve_ll(p, x, lam, y, budget, noise)
    trace.final_x, trace.final_lambda, trace.final_y = x, lam, y
    return trace


def run_bsg_rn(p: BilevelProblem, cfg: DriverConfig) -> RunTrace:
    """Mini-batch stochastic gradient loop on the risk-neutral formulation.

    The weight grid is drawn once at run start; per iteration a mini-batch is
    sampled without replacement, the corresponding warm-started lower-level
    problems are advanced, and the averaged adjoint direction updates x.
    """
    t0 = time.perf_counter()
    x, y0, _, noise = _init_state(p, cfg)
    N = cfg.n_grid
    Q = cfg.batch_size if cfg.batch_size is not None else N
    grid = sample_weight_grid(p.q, N, RngStream(cfg.seed, STREAM_GRID))
    batch_gen = RngStream(cfg.seed, STREAM_BATCH).generator()
    Ywarm = np.tile(y0, (N, 1))
    threshold = cfg.ll_threshold if cfg.ll_threshold is not None else RN_ACCURACY_THRESHOLD
    budget = LLBudget(1, cfg.ll_max_iters, threshold, cfg.ll_rule)
    ev = RiskNeutralValue(p, grid, cfg.true_ll_tol, y0)
    trace = RunTrace(problem=p.name, algo="rn")
    if cfg.record_iterates:
        trace.iterates = [x.copy()]
    f_curr = ev(x)
    trace.record(0, time.perf_counter() - t0, f_curr, np.nan, budget.current_iters, np.nan, True)
    f_ctl_prev = None
    for k in range(1, cfg.iterations + 1):
        used = budget.current_iters
        idx = batch_gen.choice(N, size=Q, replace=False)
        Ywarm[idx] = solve_ll_grid(p, x, grid[idx], Ywarm[idx], used, cfg.ll_rule, noise)
        d = bsg_rn_direction(p, x, grid[idx], Ywarm[idx], noise)
        _check_finite(d)
        dn = float(np.linalg.norm(d))
        if cfg.ul_rule.kind == "armijo":
            step = project_box(x + d, p.ul_box) - x

            def f_eval(z):
                return ev(project_box(z, p.ul_box))

            res = armijo_search(f_eval, x, step, cfg.ul_rule, f0=f_curr)
            if res.accepted:
                alpha = res.alpha
                x = project_box(x + alpha * step, p.ul_box)
                f_new = res.f_new
            else:
                alpha, f_new = 0.0, f_curr
            evaluated, ok = True, res.accepted
        else:
            alpha, ok = cfg.ul_rule.fixed_value, True
            x = project_box(x + alpha * d, p.ul_box)
            _check_finite(x)
            evaluated = (k % cfg.eval_every == 0) or (k == cfg.iterations)
            f_new = ev(x) if evaluated else f_curr
        if p.f_u_batch is not None:
            f_ctl = float(np.mean(p.f_u_batch(x, Ywarm[idx])))
        else:
            f_ctl = float(np.mean([p.f_u(x, Ywarm[i]) for i in idx]))
        if f_ctl_prev is not None:
            budget = update_accuracy(budget, f_ctl_prev, f_ctl)
        f_ctl_prev = f_ctl
        if cfg.record_iterates:
            trace.iterates.append(x.copy())
        if evaluated:
            trace.record(k, time.perf_counter() - t0, f_new, alpha, used, dn, ok)
            f_curr = f_new
    trace.final_x = x
    return trace


def run_bsg_ra(p: BilevelProblem, cfg: DriverConfig) -> RunTrace:
    """Projected subgradient loop on the risk-averse formulation: per
    iteration one warm-started inner maximization and one Lagrangian-gradient
    step on x.  Also records the risk-neutral evaluator along the iterates
    when ``ra_record_rn`` is set, for cross-formulation comparison."""
    t0 = time.perf_counter()
    x, _, _, noise = _init_state(p, cfg)
    ev = RiskAverseValue(p, cfg.inner_tol, cfg.ra_probe_points, cfg.ra_extra_starts)
    rn_ev = None
    if cfg.ra_record_rn:
        grid = sample_weight_grid(p.q, cfg.n_grid, RngStream(cfg.seed, STREAM_GRID))
        rn_ev = RiskNeutralValue(p, grid, cfg.true_ll_tol)
    trace = RunTrace(problem=p.name, algo="ra")
    trace.f_rn_aux = [] if rn_ev is not None else None
    if cfg.record_iterates:
        trace.iterates = [x.copy()]
    warm: InnerMaxSolution | None = None
    f_curr = ev(x)
    trace.record(0, time.perf_counter() - t0, f_curr, np.nan, 0, np.nan, True,
                 f_aux=rn_ev(x) if rn_ev is not None else None)
    for k in range(1, cfg.iterations + 1):
        d, sol = ra_subgradient(
            p, x, noise, warm=warm, tol=cfg.inner_tol,
            probe_points=cfg.ra_probe_points, extra_starts=cfg.ra_extra_starts,
        )
        warm = sol
        _check_finite(d)
        dn = float(np.linalg.norm(d))
        if cfg.ul_rule.kind == "armijo":
            step = project_box(x + d, p.ul_box) - x

            def f_eval(z):
                return ev(project_box(z, p.ul_box))

            res = armijo_search(f_eval, x, step, cfg.ul_rule, f0=f_curr)
            if res.accepted:
                alpha = res.alpha
                x = project_box(x + alpha * step, p.ul_box)
                f_new = res.f_new
            else:
                alpha, f_new = 0.0, f_curr
            evaluated, ok = True, res.accepted
        else:
            alpha, ok = cfg.ul_rule.fixed_value, True
            x = project_box(x + alpha * d, p.ul_box)
            _check_finite(x)
            evaluated = (k % cfg.eval_every == 0) or (k == cfg.iterations)
            f_new = ev(x) if evaluated else f_curr
        if cfg.record_iterates:
            trace.iterates.append(x.copy())
        if evaluated:
            trace.record(k, time.perf_counter() - t0, f_new, alpha, sol.n_outer, dn, ok,
                         f_aux=rn_ev(x) if rn_ev is not None else None)
            f_curr = f_new
    trace.final_x = x
    trace.final_inner = solve_inner_max(
        p, x, init=warm, tol=cfg.inner_tol,
        probe_points=cfg.ra_probe_points, extra_starts=cfg.ra_extra_starts,
    )
    trace.final_lambda = trace.final_inner.lam
    return trace


RUNNERS = {"opt": run_bsg_opt, "rn": run_bsg_rn, "ra": run_bsg_ra}


@dataclass(frozen=True)
class ParetoFrontSample:
    """Front sweep at a fixed x: weight, objective pair, and minimizer per
    point, plus indices of weights whose lower-level solve failed."""

    lam1: Array
    f1: Array
    f2: Array
    Y: Array
    skipped: tuple[int, ...] = ()
    mark: tuple[float, float] | None = None


def pareto_front(p: BilevelProblem, x, M: int = 200, mark_y=None) -> ParetoFrontSample:
    """Sweep lam_1 over M equispaced values in [0, 1] (two-objective problems),
    solving each weighted lower-level problem to 1e-8, and record both
    objective values.  ``mark_y`` adds the objective pair of a distinguished
    point (e.g. the optimistic or pessimistic solution)."""
    if p.q != 2:
        raise ValueError("pareto_front expects a two-objective lower level")
    if M < 2:
        raise ValueError("M must be >= 2")
    x = as_vector(x, p.n)
    lam1 = np.linspace(0.0, 1.0, M)
    lams = np.stack([lam1, 1.0 - lam1], axis=1)
    Y = np.zeros((M, p.m))
    skipped: list[int] = []
    try:
        from .lower import solve_ll_grid_accurate

        Y = solve_ll_grid_accurate(p, x, lams, Y, tol=1e-8)
    except (LLSolveError, np.linalg.LinAlgError):
        y_warm = np.zeros(p.m)
        for i in range(M):
            try:
                Y[i] = solve_ll_accurate(p, x, lams[i], y_warm, tol=1e-8)
                y_warm = Y[i]
            except (LLSolveError, np.linalg.LinAlgError):
                skipped.append(i)
    keep = np.setdiff1d(np.arange(M), np.array(skipped, dtype=int))
    Yk = Y[keep]
    if p.has_ll_batch:
        f1 = np.asarray(p.ll[0].value_batch(x, Yk), dtype=float)
        f2 = np.asarray(p.ll[1].value_batch(x, Yk), dtype=float)
    else:
        f1 = np.array([p.ll[0].value(x, Yk[i]) for i in range(Yk.shape[0])])
        f2 = np.array([p.ll[1].value(x, Yk[i]) for i in range(Yk.shape[0])])
    mark = None
    if mark_y is not None:
        my = as_vector(mark_y, p.m)
        mark = (float(p.ll[0].value(x, my)), float(p.ll[1].value(x, my)))
    return ParetoFrontSample(lam1[keep], f1, f2, Yk, tuple(skipped), mark)


def _chord_sagitta(a1: Array, a2: Array) -> float:
    """Worst gap between the sampled curve and the chords of its neighbors;
    bounds the interpolation error of the piecewise-linear front."""
    if a1.size < 3:
        return 0.0
    t = (a1[1:-1] - a1[:-2]) / np.maximum(a1[2:] - a1[:-2], 1e-300)
    lin = a2[:-2] + t * (a2[2:] - a2[:-2])
    return float(np.max(np.abs(lin - a2[1:-1])))


def front_weakly_dominates(front_a: ParetoFrontSample, front_b: ParetoFrontSample,
                           slack: float | None = None) -> bool:
    """True when the sampled curve of front_a lies weakly below-left of every
    point of front_b.

    front_a is treated as the piecewise-linear curve through its sweep points
    (sorted by the first objective); a point of front_b is covered when the
    curve value at its f1 coordinate is no larger in f2, or when it sits
    beyond the curve's f1 range on the high side.  The default slack is the
    curve's own chord sagitta, which absorbs the discretization error where
    two fronts are tangent.
    """
    order = np.argsort(front_a.f1)
    a1 = front_a.f1[order]
    a2 = front_a.f2[order]
    if slack is None:
        slack = max(1e-9, _chord_sagitta(a1, a2))
    lo, hi = a1[0], a1[-1]
    for b1, b2 in zip(front_b.f1, front_b.f2):
        if b1 < lo - slack:
            return False
        q = min(max(b1, lo), hi)
        if np.interp(q, a1, a2) > b2 + slack:
            return False
    return True


def front_nondominated(front: ParetoFrontSample, slack: float = 1e-9) -> bool:
    """True when no swept point strictly dominates another."""
    F = np.stack([front.f1, front.f2], axis=1)
    strict = (
        (F[:, None, 0] < F[None, :, 0] - slack)
        & (F[:, None, 1] < F[None, :, 1] - slack)
    )
    return not bool(strict.any())


def opt_stationarity(p: BilevelProblem, x, lam, ll_tol: float = 1e-10) -> float:
    """Projected-step stationarity measure for the optimistic formulation:
    |(x, lam) - P((x, lam) + d)| with d the noiseless direction at an
    accurately solved lower level."""
    x = as_vector(x, p.n)
    lam = project_simplex(as_vector(lam, p.q))
    y = solve_ll_accurate(p, x, lam, np.zeros(p.m), tol=ll_tol)
    d_x, d_lam = bsg_opt_direction(p, x, lam, y, NoiseSpec.none())
    moved_x = project_box(x + d_x, p.ul_box)
    moved_lam = project_simplex(lam + d_lam)
    return float(np.linalg.norm(np.concatenate([moved_x - x, moved_lam - lam])))


def rn_stationarity(p: BilevelProblem, x, grid, ll_tol: float = 1e-10) -> float:
    """Projected-step stationarity measure for the risk-neutral objective on
    the full grid."""
    from .lower import solve_ll_grid_accurate

    x = as_vector(x, p.n)
    grid = np.asarray(grid, dtype=float)
    Y = solve_ll_grid_accurate(p, x, grid, np.zeros((grid.shape[0], p.m)), tol=ll_tol)
    d = bsg_rn_direction(p, x, grid, Y, NoiseSpec.none())
    return float(np.linalg.norm(project_box(x + d, p.ul_box) - x))


def ra_stationarity(
    p: BilevelProblem, x, inner_tol: float = 1e-8, probe_points: int = 9,
    fd_step: float = 1e-4,
) -> float:
    """Stationarity measure for the risk-averse objective.

    Returns the projected-step norm when it is already small; otherwise a
    finite-difference directional derivative along the remaining projected
    direction decides whether descent is still available (nonsmooth-safe).
    """
    x = as_vector(x, p.n)
    d, _ = ra_subgradient(p, x, NoiseSpec.none(), tol=inner_tol,
                          probe_points=probe_points)
    delta = project_box(x + d, p.ul_box) - x
    step = float(np.linalg.norm(delta))
    if step <= 1e-4:
        return step
    u = delta / step
    ev = RiskAverseValue(p, inner_tol, probe_points)
    deriv = (ev(x + fd_step * u) - ev(x - fd_step * u)) / (2.0 * fd_step)
    # Descent still available along the projected direction means the
    # directional derivative is negative; at (nonsmooth) stationarity it is
    # nonnegative and the measure vanishes.
    return max(0.0, -deriv)
