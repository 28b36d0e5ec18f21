"""Risk-averse machinery: maximization of the upper-level objective over the
KKT-characterized weighted-sum stationarity manifold, and the Danskin-style
subgradient built from the Lagrangian multipliers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .core import Array, RngLike, as_generator, as_vector, project_simplex
from .errors import InnerMaxInfeasibleError
from .lower import solve_ll_grid_accurate
from .noise import NoiseSpec, perturb_cross_hessian, perturb_gradient
from .problems import BilevelProblem

#: KKT tolerance the inner solver targets by default.
KKT_TOL = 1e-6

#: Active-set threshold on the simplex block.
_ACTIVE_TOL = 1e-8

_PENALTY_INIT = 10.0
_PENALTY_GROWTH = 10.0
_PENALTY_MAX = 1e10
_MAX_OUTER = 20


@dataclass(frozen=True)
class InnerMaxSolution:
    """KKT point of the inner maximization at a fixed upper-level x.

    ``z_E`` stacks the simplex-sum multiplier (entry 0) and the m
    stationarity-row multipliers; ``z_I`` holds the nonnegativity multipliers
    of the weights.  ``licq_min_singular`` is the smallest singular value of
    the active-constraint Jacobian (diagnostic only).
    """

    y: Array
    lam: Array
    z_E: Array
    z_I: Array
    f_u_value: float
    kkt_residual: float
    constraint_residual: float
    converged: bool
    n_outer: int = 0
    licq_min_singular: float = float("nan")


def _constraint_parts(p: BilevelProblem, x: Array, y: Array, lam: Array):
    """Stationarity constraint c = sum_j lam_j grad_y f_j, its lambda-Jacobian
    columns G[:, j] = grad_y f_j, and the weighted y-Jacobian Hyy."""
    G = np.empty((p.m, p.q))
    for j in range(p.q):
        G[:, j] = p.ll[j].grad_y(x, y)
    c = G @ lam
    Hyy = lam[0] * p.ll[0].hess_yy(x, y)
    for j in range(1, p.q):
        Hyy = Hyy + lam[j] * p.ll[j].hess_yy(x, y)
    return c, G, Hyy


def _al_value(p, x, y, lam, nu, rho):
    c = _constraint_parts(p, x, y, lam)[0]
    return -p.f_u(x, y) + float(nu @ c) + 0.5 * rho * float(c @ c), c


def _face_basis(f: int) -> np.ndarray:
    """Orthonormal basis of the simplex-face tangent space {t : sum t = 0}."""
    if f <= 1:
        return np.zeros((max(f, 0), 0))
    return sla.null_space(np.ones((1, f)))


def _al_inner(p, x, y, lam, nu, rho, gtol, max_steps):
    """Minimize the augmented Lagrangian over (y, lam in simplex).

    Active-set reduced Newton: steps live in the tangent space of the current
    simplex face (blocked weights re-enter when their face-relative derivative
    is negative), with Levenberg damping on the reduced system and a projected
    gradient fallback.  The Hessian model keeps every curvature block the
    oracles supply (penalty Gauss-Newton terms plus the bilinear stationarity
    coupling) and drops third-derivative terms, which vanish for objectives
    quadratic in y.
    """
    m, q = p.m, p.q
    a_cur, c = _al_value(p, x, y, lam, nu, rho)
    tau = 1e-4
    for _ in range(max_steps):
        _, G, Hyy = _constraint_parts(p, x, y, lam)
        u = nu + rho * c
        gy_fu = p.grad_y_fu(x, y)
        grad_y = -gy_fu + Hyy @ u
        grad_l = G.T @ u
        pg = max(
            float(np.max(np.abs(grad_y))) if m else 0.0,
            float(np.max(np.abs(lam - project_simplex(lam - grad_l)))),
        )
        if pg <= gtol:
            break
        free = lam > _ACTIVE_TOL
        base = float(grad_l[free].mean())
        enter = grad_l - base
        face = free | (enter < -1e-12 * (1.0 + abs(base)))
        idx = np.nonzero(face)[0]
        Z = _face_basis(idx.size)
        Byy = rho * (Hyy @ Hyy)
        if Z.shape[1]:
            Byl = np.empty((m, q))
            for j in range(q):
                Byl[:, j] = p.ll[j].hess_yy(x, y) @ u
            Byl += rho * (Hyy @ G)
            Bll = rho * (G.T @ G)
            Bylf = Byl[:, idx] @ Z
            Bllf = Z.T @ Bll[np.ix_(idx, idx)] @ Z
            Bred = np.block([[Byy, Bylf], [Bylf.T, Bllf]])
            gred = np.concatenate([grad_y, Z.T @ grad_l[idx]])
        else:
            Bred = Byy
            gred = grad_y
        accepted = False
        for _ in range(40):
            try:
                step = -sla.cho_solve(
                    sla.cho_factor(Bred + tau * np.eye(gred.size), check_finite=False),
                    gred, check_finite=False,
                )
            except np.linalg.LinAlgError:
                tau = max(tau, 1e-8) * 10.0
                continue
            y_t = y + step[:m]
            lam_t = lam.copy()
            if Z.shape[1]:
                lam_t[idx] = lam[idx] + Z @ step[m:]
            lam_t = project_simplex(lam_t)
            a_t, c_t = _al_value(p, x, y_t, lam_t, nu, rho)
            if a_t < a_cur:
                y, lam, a_cur, c = y_t, lam_t, a_t, c_t
                tau = max(tau / 3.0, 1e-10)
                accepted = True
                break
            tau *= 10.0
            if tau > 1e14:
                break
        if not accepted:
            # Reduced Newton exhausted; try a plain projected gradient step.
            t = 1.0
            for _ in range(50):
                y_t = y - t * grad_y
                lam_t = project_simplex(lam - t * grad_l)
                a_t, c_t = _al_value(p, x, y_t, lam_t, nu, rho)
                if a_t < a_cur:
                    y, lam, a_cur, c = y_t, lam_t, a_t, c_t
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
    return y, lam, c


def _kkt_pieces(p, x, y, lam, u):
    """KKT residual blocks at (y, lam) for the multiplier estimate u.

    Returns (kkt, r_c, z_e0, z_i, G, Hyy): the max-norm residual over
    y-stationarity, feasibility, weight-block stationarity with nonnegative
    multipliers, and complementarity.
    """
    c, G, Hyy = _constraint_parts(p, x, y, lam)
    gl = G.T @ u
    free = lam > _ACTIVE_TOL
    z_e0 = float(lam[free] @ gl[free] / lam[free].sum())
    z_i_raw = gl - z_e0
    z_i = np.maximum(z_i_raw, 0.0)
    r_y = float(np.max(np.abs(p.grad_y_fu(x, y) - Hyy @ u)))
    r_c = float(np.max(np.abs(c))) if c.size else 0.0
    r_lam = 0.0
    for j in range(p.q):
        if free[j]:
            r_lam = max(r_lam, abs(z_i_raw[j]))
        else:
            r_lam = max(r_lam, max(0.0, -z_i_raw[j]))
    r_comp = float(np.max(np.abs(z_i * lam)))
    kkt = max(r_y, r_c, r_lam, r_comp)
    return kkt, r_c, z_e0, z_i, G, Hyy


def _finalize(p, x, y, lam, u, n_outer, tol) -> InnerMaxSolution:
    kkt, r_c, z_e0, z_i, G, Hyy = _kkt_pieces(p, x, y, lam, u)
    z_stat = -u
    free = lam > _ACTIVE_TOL

    rows = [np.concatenate([np.zeros(p.m), np.ones(p.q)])]
    rows.append(np.hstack([Hyy, G]))
    for j in np.nonzero(~free)[0]:
        e = np.zeros(p.m + p.q)
        e[p.m + j] = 1.0
        rows.append(e)
    jac = np.vstack([np.atleast_2d(r) for r in rows])
    smin = float(np.linalg.svd(jac, compute_uv=False).min())

    return InnerMaxSolution(
        y=y,
        lam=lam,
        z_E=np.concatenate([[z_e0], z_stat]),
        z_I=z_i,
        f_u_value=float(p.f_u(x, y)),
        kkt_residual=kkt,
        constraint_residual=r_c,
        converged=kkt <= tol,
        n_outer=n_outer,
        licq_min_singular=smin,
    )


def _probe_lambdas(q: int, points: int, rng: RngLike | None) -> Array:
    """Deterministic coarse grid on the simplex used to pick starting points."""
    if q == 1:
        return np.ones((1, 1))
    if q == 2:
        t = np.linspace(0.0, 1.0, max(points, 2))
        return np.stack([t, 1.0 - t], axis=1)
    cands = [np.full(q, 1.0 / q)]
    cands.extend(np.eye(q))
    extra = max(points - len(cands), 0)
    if extra:
        gen = as_generator(rng) if rng is not None else np.random.default_rng(0)
        cands.extend(gen.dirichlet(np.ones(q), size=extra))
    return np.asarray(cands)


def probe_feasible_points(
    p: BilevelProblem, x, lams, y0=None, ll_tol: float = 1e-10
) -> tuple[Array, Array]:
    """Solve the weighted lower-level problem on a stack of weights and return
    (Y, f_u values); the rows of ``lams`` are all feasible for the inner max."""
    x = as_vector(x, p.n)
    lams = np.asarray(lams, dtype=float)
    Y0 = np.tile(as_vector(y0, p.m) if y0 is not None else np.zeros(p.m),
                 (lams.shape[0], 1))
    Y = solve_ll_grid_accurate(p, x, lams, Y0, tol=ll_tol)
    if p.f_u_batch is not None:
        vals = np.asarray(p.f_u_batch(x, Y), dtype=float)
    else:
        vals = np.array([p.f_u(x, Y[k]) for k in range(Y.shape[0])])
    return Y, vals


def solve_inner_max(
    p: BilevelProblem,
    x,
    init: InnerMaxSolution | None = None,
    *,
    tol: float = KKT_TOL,
    max_outer: int = _MAX_OUTER,
    inner_steps: int = 150,
    probe_points: int = 9,
    extra_starts: int = 0,
    rng: RngLike | None = None,
) -> InnerMaxSolution:
    """Maximize f_u(x, .) over the weighted-sum stationarity manifold.

    Augmented-Lagrangian outer loop on the m stationarity equalities (the
    simplex is handled by projection inside the damped-Newton subproblem);
    penalty starts at 10 and escalates tenfold whenever feasibility stalls.

    Starting points: the warm ``init`` when given, plus the best point of a
    coarse weight-grid probe (each probe point is feasible by construction);
    ``extra_starts`` adds seeded random weights.  The best KKT point found is
    returned; an unreachable feasibility tolerance raises
    InnerMaxInfeasibleError, while a feasible point that misses the KKT
    tolerance within the outer budget is returned flagged.

    Parameters
    ----------
    init : optional warm start (previous solution); its stationarity
        multipliers seed the new multiplier estimates.
    probe_points : size of the coarse probe grid (0 disables probing; at
        least one start is always used).
    """
    x = as_vector(x, p.n)
    starts: list[tuple[Array, Array, Array]] = []
    if init is not None:
        starts.append((as_vector(init.y, p.m).copy(),
                       project_simplex(init.lam),
                       -as_vector(init.z_E, p.m + 1)[1:].copy()))
    if probe_points > 0 or not starts:
        lams = _probe_lambdas(p.q, max(probe_points, 1), rng)
        y_anchor = starts[0][0] if starts else None
        Y, vals = probe_feasible_points(p, x, lams, y0=y_anchor)
        best = int(np.argmax(vals))
        starts.append((Y[best].copy(), lams[best].copy(), np.zeros(p.m)))
    if extra_starts > 0:
        gen = as_generator(rng) if rng is not None else np.random.default_rng(1)
        lams = gen.dirichlet(np.ones(p.q), size=extra_starts)
        Y, _ = probe_feasible_points(p, x, lams)
        for k in range(extra_starts):
            starts.append((Y[k].copy(), lams[k].copy(), np.zeros(p.m)))

    best_sol: InnerMaxSolution | None = None
    for y0, lam0, nu0 in starts:
        y, lam, nu = y0, lam0, nu0.copy()
        rho = _PENALTY_INIT
        omega = max(1e-2, tol)
        c_prev = np.inf
        u_est = nu
        n_outer = 0
        for n_outer in range(1, max_outer + 1):
            omega = max(0.5 * tol, 0.2 * omega)
            y, lam, c = _al_inner(p, x, y, lam, nu, rho, omega, inner_steps)
            cn = float(np.max(np.abs(c))) if c.size else 0.0
            u_est = nu + rho * c
            if _kkt_pieces(p, x, y, lam, u_est)[0] <= tol:
                break
            if cn > 0.25 * c_prev and cn > tol:
                rho = min(rho * _PENALTY_GROWTH, _PENALTY_MAX)
            nu = u_est
            c_prev = cn
        sol = _finalize(p, x, y, lam, u_est, n_outer, tol)
        if _better(sol, best_sol, tol):
            best_sol = sol

    assert best_sol is not None
    if best_sol.constraint_residual > tol:
        raise InnerMaxInfeasibleError(
            f"inner maximization could not restore feasibility: "
            f"constraint residual {best_sol.constraint_residual:.3e} > {tol:.1e}"
        )
    return best_sol


def _better(a: InnerMaxSolution, b: InnerMaxSolution | None, tol: float) -> bool:
    if b is None:
        return True
    a_ok, b_ok = a.constraint_residual <= tol, b.constraint_residual <= tol
    if a_ok != b_ok:
        return a_ok
    if not a_ok:
        return a.constraint_residual < b.constraint_residual
    return a.f_u_value > b.f_u_value


def lagrangian_grad_x(
    p: BilevelProblem, sol: InnerMaxSolution, x, noise: NoiseSpec | None = None
) -> Array:
    """x-gradient of the inner Lagrangian at a solution:
    grad_x f_u + (sum_j lam_j hess_xy_j) z_E[stationarity block].

    The scalar simplex-sum multiplier does not enter (its constraint is
    x-independent).  Oracle calls go through the noise layer.
    """
    noise = noise if noise is not None else NoiseSpec.none()
    x = as_vector(x, p.n)
    y = as_vector(sol.y, p.m)
    gx = perturb_gradient(p.grad_x_fu(x, y), noise)
    Hxy = sol.lam[0] * p.ll[0].hess_xy(x, y)
    for j in range(1, p.q):
        Hxy = Hxy + sol.lam[j] * p.ll[j].hess_xy(x, y)
    Hxy = perturb_cross_hessian(Hxy, noise)
    return gx + Hxy @ sol.z_E[1:]


def ra_subgradient(
    p: BilevelProblem,
    x,
    noise: NoiseSpec | None = None,
    warm: InnerMaxSolution | None = None,
    **solver_opts,
) -> tuple[Array, InnerMaxSolution]:
    """One negative stochastic subgradient of the risk-averse objective.

    Solves the (noiseless) inner maximization, then returns
    d = -lagrangian_grad_x at its solution together with the solution itself
    for warm-starting the next call.
    """
    sol = solve_inner_max(p, x, init=warm, **solver_opts)
    d = -lagrangian_grad_x(p, sol, x, noise)
    return d, sol
