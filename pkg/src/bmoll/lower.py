"""Weighted-sum lower-level solvers: budgeted (stochastic) gradient descent
for the driver loops, an increasing-accuracy controller, and high-accuracy
damped-Newton solves for the true-function evaluators."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import Array, as_vector, assert_simplex
from .errors import DivergenceError, LLSolveError
from .noise import NoiseSpec, perturb_gradient
from .problems import BilevelProblem
from .stepsize import StepsizeRule, armijo_search


@dataclass(frozen=True)
class LLBudget:
    """Iteration budget for the lower-level solver.

    ``current_iters`` grows by one (up to ``max_iters``) whenever the
    upper-level objective changes by less than ``f_u_threshold`` between
    consecutive upper-level iterations.
    """

    current_iters: int = 1
    max_iters: int = 30
    f_u_threshold: float = 0.1
    ll_stepsize: StepsizeRule = field(default_factory=StepsizeRule.armijo)

    def __post_init__(self):
        if not 1 <= self.current_iters <= self.max_iters:
            raise ValueError("need 1 <= current_iters <= max_iters")
        if not self.f_u_threshold > 0:
            raise ValueError("f_u_threshold must be > 0")


def update_accuracy(budget: LLBudget, f_u_prev: float, f_u_curr: float) -> LLBudget:
    """Increment the budget when the objective stalls below the threshold."""
    diff = abs(f_u_curr - f_u_prev)
    if np.isfinite(diff) and diff < budget.f_u_threshold and budget.current_iters < budget.max_iters:
        return replace(budget, current_iters=budget.current_iters + 1)
    return budget


def weighted_ll_value(p: BilevelProblem, x, lam, y) -> float:
    x, y = as_vector(x, p.n), as_vector(y, p.m)
    return float(sum(lam[j] * p.ll[j].value(x, y) for j in range(p.q)))


def weighted_ll_grad(
    p: BilevelProblem, x, lam, y, noise: NoiseSpec | None = None, check: bool = True
) -> Array:
    """Gradient of the weighted objective sum_j lam_j f_j in y, optionally
    perturbed through the noise layer (one draw on the weighted gradient)."""
    if check:
        lam = assert_simplex(lam, name="lam")
    else:
        lam = as_vector(lam, p.q)
    x, y = as_vector(x, p.n), as_vector(y, p.m)
    g = lam[0] * p.ll[0].grad_y(x, y)
    for j in range(1, p.q):
        g = g + lam[j] * p.ll[j].grad_y(x, y)
    if noise is not None:
        g = perturb_gradient(g, noise)
    return g


def weighted_ll_hess(p: BilevelProblem, x, lam, y) -> Array:
    H = lam[0] * p.ll[0].hess_yy(x, y)
    for j in range(1, p.q):
        H = H + lam[j] * p.ll[j].hess_yy(x, y)
    return H


def solve_ll(
    p: BilevelProblem,
    x,
    lam,
    y0,
    budget: LLBudget,
    noise: NoiseSpec | None = None,
    tol: float | None = None,
) -> Array:
    """Run ``budget.current_iters`` (stochastic) gradient-descent steps on the
    weighted objective from ``y0`` and return the final iterate.

    ``tol`` optionally stops early once the (possibly noisy) gradient norm
    falls below it; the driver loops leave it unset.
    """
    lam = assert_simplex(lam, name="lam")
    x = as_vector(x, p.n)
    y = as_vector(y0, p.m).copy()
    rule = budget.ll_stepsize
    for _ in range(budget.current_iters):
        g = weighted_ll_grad(p, x, lam, y, noise, check=False)
        if tol is not None and float(np.linalg.norm(g)) <= tol:
            break
        if rule.kind == "fixed":
            alpha = rule.fixed_value
        else:
            res = armijo_search(
                lambda z: weighted_ll_value(p, x, lam, z), y, -g, rule,
                f0=weighted_ll_value(p, x, lam, y),
            )
            alpha = res.alpha
        with np.errstate(over="ignore", invalid="ignore"):
            y = y - alpha * g
        if not np.all(np.isfinite(y)):
            raise DivergenceError("lower-level iterate became non-finite "
                                  "(divergent stepsize?)")
    return y


# -- batched variants over a stack of weights -------------------------------

def _weighted_value_grid(p: BilevelProblem, x, lams: Array, Y: Array) -> Array:
    vals = lams[:, 0] * p.ll[0].value_batch(x, Y)
    for j in range(1, p.q):
        vals = vals + lams[:, j] * p.ll[j].value_batch(x, Y)
    return vals


def _weighted_grad_grid(p: BilevelProblem, x, lams: Array, Y: Array) -> Array:
    G = lams[:, 0:1] * p.ll[0].grad_y_batch(x, Y)
    for j in range(1, p.q):
        G = G + lams[:, j:j + 1] * p.ll[j].grad_y_batch(x, Y)
    return G


def _weighted_hess_grid(p: BilevelProblem, x, lams: Array, Y: Array) -> Array:
    H = lams[:, 0, None, None] * p.ll[0].hess_yy_batch(x, Y)
    for j in range(1, p.q):
        H = H + lams[:, j, None, None] * p.ll[j].hess_yy_batch(x, Y)
    return H


def solve_ll_grid(
    p: BilevelProblem,
    x,
    lams,
    Y0,
    iters: int,
    rule: StepsizeRule,
    noise: NoiseSpec | None = None,
) -> Array:
    """Vectorized :func:`solve_ll` over a (K, q) stack of weights.

    Falls back to per-row solves when the problem has no batched oracles.
    Row k runs the same descent recursion as a standalone solve of weight k.
    """
    lams = np.asarray(lams, dtype=float)
    Y = np.array(Y0, dtype=float, copy=True)
    x = as_vector(x, p.n)
    if not p.has_ll_batch:
        budget = LLBudget(max(iters, 1), max(iters, 1), 1.0, rule)
        for k in range(lams.shape[0]):
            Y[k] = solve_ll(p, x, lams[k], Y[k], budget, noise)
        return Y
    if iters < 1:
        return Y
    for _ in range(iters):
        G = _weighted_grad_grid(p, x, lams, Y)
        if noise is not None:
            G = perturb_gradient(G, noise)
        if rule.kind == "fixed":
            Y = Y - rule.fixed_value * G
        else:
            ap = rule.armijo_params
            f0 = _weighted_value_grid(p, x, lams, Y)
            gg = np.sum(G * G, axis=1)
            alpha = np.full(lams.shape[0], ap.initial)
            undecided = gg > 0
            for _ in range(ap.max_backtracks):
                if not undecided.any():
                    break
                f_t = _weighted_value_grid(p, x, lams, Y - alpha[:, None] * G)
                ok = f_t <= f0 - ap.sufficient_decrease * alpha * gg
                undecided = undecided & ~ok
                alpha[undecided] *= ap.contraction
            Y = Y - alpha[:, None] * G
        if not np.all(np.isfinite(Y)):
            raise DivergenceError("lower-level grid iterate became non-finite")
    return Y


def solve_ll_accurate(
    p: BilevelProblem,
    x,
    lam,
    y0,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> Array:
    """Damped-Newton solve of the weighted stationarity system to ``tol``.

    Used by the true-function evaluators; noiseless.  Falls back to gradient
    steps when the weighted Hessian cannot be factorized.
    """
    import scipy.linalg as sla

    x = as_vector(x, p.n)
    lam = as_vector(lam, p.q)
    y = as_vector(y0, p.m).copy()
    for _ in range(max_iter):
        g = weighted_ll_grad(p, x, lam, y, check=False)
        if float(np.linalg.norm(g)) <= tol:
            return y
        H = weighted_ll_hess(p, x, lam, y)
        try:
            step = -sla.cho_solve(sla.cho_factor(H, check_finite=False), g)
        except np.linalg.LinAlgError:
            step = -g
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -float(g @ g)
        f0 = weighted_ll_value(p, x, lam, y)
        t = 1.0
        for _ in range(60):
            y_t = y + t * step
            if weighted_ll_value(p, x, lam, y_t) <= f0 + 1e-4 * t * slope:
                break
            t *= 0.5
        y = y + t * step
    g = weighted_ll_grad(p, x, lam, y, check=False)
    if float(np.linalg.norm(g)) <= tol:
        return y
    raise LLSolveError(
        f"lower-level solve stalled at residual {np.linalg.norm(g):.3e} (tol {tol:.1e})"
    )


def solve_ll_grid_accurate(
    p: BilevelProblem,
    x,
    lams,
    Y0,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> Array:
    """Batched damped-Newton solve across a (K, q) stack of weights."""
    lams = np.asarray(lams, dtype=float)
    Y = np.array(Y0, dtype=float, copy=True)
    x = as_vector(x, p.n)
    K = lams.shape[0]
    if p.ll_solution_grid is not None:
        try:
            return p.ll_solution_grid(x, lams)
        except (ValueError, np.linalg.LinAlgError):
            pass
    if not p.has_ll_batch:
        for k in range(K):
            Y[k] = solve_ll_accurate(p, x, lams[k], Y[k], tol, max_iter)
        return Y
    active = np.ones(K, dtype=bool)
    for _ in range(max_iter):
        G = _weighted_grad_grid(p, x, lams, Y)
        res = np.linalg.norm(G, axis=1)
        active = res > tol
        if not active.any():
            return Y
        H = _weighted_hess_grid(p, x, lams, Y)
        try:
            steps = -np.linalg.solve(H[active], G[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            for k in np.nonzero(active)[0]:
                Y[k] = solve_ll_accurate(p, x, lams[k], Y[k], tol, max_iter)
            return Y
        idx = np.nonzero(active)[0]
        slopes = np.sum(G[idx] * steps, axis=1)
        bad = slopes >= 0
        steps[bad] = -G[idx][bad]
        f0 = _weighted_value_grid(p, x, lams[idx], Y[idx])
        slopes = np.sum(G[idx] * steps, axis=1)
        t = np.ones(idx.size)
        undecided = np.ones(idx.size, dtype=bool)
        for _ in range(60):
            if not undecided.any():
                break
            f_t = _weighted_value_grid(p, x, lams[idx], Y[idx] + t[:, None] * steps)
            ok = f_t <= f0 + 1e-4 * t * slopes
            undecided = undecided & ~ok
            t[undecided] *= 0.5
        Y[idx] = Y[idx] + t[:, None] * steps
    G = _weighted_grad_grid(p, x, lams, Y)
    res = np.linalg.norm(G, axis=1)
    if np.all(res <= tol):
        return Y
    raise LLSolveError(
        f"grid lower-level solve stalled; worst residual {res.max():.3e} (tol {tol:.1e})"
    )
