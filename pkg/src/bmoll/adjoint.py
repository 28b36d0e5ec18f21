"""Hypergradient assembly for the optimistic and risk-neutral formulations,
including the adjoint linear solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .core import Array, as_vector, assert_simplex
from .errors import NumericalError, SingularHessianError
from .noise import (
    NoiseSpec,
    perturb_cross_hessian,
    perturb_gradient,
    perturb_hessian,
    perturb_hessian_stack,
)
from .problems import BilevelProblem

_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class AdjointWorkspace:
    """Assembled pieces of one adjoint evaluation.

    ``hess_yy``/``hess_xy`` are the weight-combined second-derivative blocks,
    ``lambda_rows`` stacks the per-objective y-gradients (row j belongs to
    objective j), and ``mu`` solves hess_yy @ mu = grad_y f_u.
    """

    hess_yy: Array
    hess_xy: Array
    lambda_rows: Array
    mu: Array


def solve_adjoint(Hyy, g) -> Array:
    """Solve Hyy mu = g through a symmetric positive-definite factorization.

    Raises SingularHessianError when the factorization fails, which signals a
    weighted Hessian that is not positive definite at this point.
    """
    Hyy = np.asarray(Hyy, dtype=float)
    g = as_vector(g, Hyy.shape[0] if Hyy.ndim == 2 else None)
    if Hyy.ndim != 2 or Hyy.shape[0] != Hyy.shape[1]:
        raise ValueError(f"Hyy must be square, got shape {Hyy.shape}")
    scale = 1.0 + float(np.max(np.abs(Hyy)))
    if float(np.max(np.abs(Hyy - Hyy.T))) > 1e-9 * scale:
        raise ValueError("solve_adjoint requires a symmetric matrix")
    try:
        factor = sla.cho_factor(Hyy, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError(
            "weighted Hessian not positive definite (strict-convexity violation)"
        ) from exc
    mu = sla.cho_solve(factor, g, check_finite=False)
    # The 1e-10 target binds for well-conditioned systems; severely clipped
    # stochastic estimates can only reach the backward-stable floor
    # eps * |H| * |mu|.
    floor = 64.0 * np.finfo(float).eps * float(
        np.linalg.norm(Hyy) * max(1.0, np.linalg.norm(mu))
    )
    bound = max(_RESIDUAL_TOL * max(1.0, float(np.linalg.norm(g))), floor)
    r = Hyy @ mu - g
    if float(np.linalg.norm(r)) > bound:
        mu = mu - sla.cho_solve(factor, r, check_finite=False)
        r = Hyy @ mu - g
        if float(np.linalg.norm(r)) > bound:
            raise NumericalError(
                f"adjoint solve residual {np.linalg.norm(r):.3e} exceeds {bound:.3e}"
            )
    return mu


def assemble_workspace(
    p: BilevelProblem, x, lam, y, noise: NoiseSpec | None = None
) -> tuple[AdjointWorkspace, Array, Array]:
    """Build the adjoint workspace at (x, lam, y) plus the (noisy) upper-level
    gradients, drawing noise in a fixed order: grad_x, grad_y, hess_yy,
    hess_xy, then the per-objective gradient rows."""
    noise = noise if noise is not None else NoiseSpec.none()
    x = as_vector(x, p.n)
    y = as_vector(y, p.m)
    gx = perturb_gradient(p.grad_x_fu(x, y), noise)
    gy = perturb_gradient(p.grad_y_fu(x, y), noise)
    Hyy = lam[0] * p.ll[0].hess_yy(x, y)
    Hxy = lam[0] * p.ll[0].hess_xy(x, y)
    for j in range(1, p.q):
        Hyy = Hyy + lam[j] * p.ll[j].hess_yy(x, y)
        Hxy = Hxy + lam[j] * p.ll[j].hess_xy(x, y)
    Hyy = perturb_hessian(Hyy, noise, require_pd=noise.sigma_hess > 0)
    Hxy = perturb_cross_hessian(Hxy, noise)
    rows = np.stack([perturb_gradient(p.ll[j].grad_y(x, y), noise) for j in range(p.q)])
    mu = solve_adjoint(Hyy, gy)
    return AdjointWorkspace(Hyy, Hxy, rows, mu), gx, gy


def bsg_opt_direction(
    p: BilevelProblem, x, lam, y_tilde, noise: NoiseSpec | None = None
) -> tuple[Array, Array]:
    """Negative adjoint gradient of the optimistic formulation.

    Returns (d_x, d_lambda) with d_x = -(grad_x f_u - hess_xy mu) and
    d_lambda = lambda_rows mu, where mu solves the weighted adjoint system at
    (x, y_tilde).  All oracle calls are routed through the noise layer.
    """
    lam = assert_simplex(lam, name="lam")
    ws, gx, _ = assemble_workspace(p, x, lam, y_tilde, noise)
    d_x = -(gx - ws.hess_xy @ ws.mu)
    d_lam = ws.lambda_rows @ ws.mu
    return d_x, d_lam


def _rn_direction_loop(p, x, batch, Ys, noise) -> Array:
    total = np.zeros(p.n)
    for i in range(batch.shape[0]):
        try:
            ws, gx, _ = assemble_workspace(p, x, batch[i], Ys[i], noise)
        except SingularHessianError as exc:
            raise SingularHessianError(f"batch index {i}: {exc}") from exc
        total += gx - ws.hess_xy @ ws.mu
    return -total / batch.shape[0]


def bsg_rn_direction(
    p: BilevelProblem, x, batch, y_tildes, noise: NoiseSpec | None = None
) -> Array:
    """Mini-batch averaged negative hypergradient of the risk-neutral
    objective: -(1/Q) sum_i [grad_x f_u - hess_xy^i (hess_yy^i)^-1 grad_y f_u]
    with each bracket evaluated at (x, y_tilde_i).

    Noise draws are independent per batch member.  A singular weighted
    Hessian raises with the offending batch index.
    """
    noise = noise if noise is not None else NoiseSpec.none()
    x = as_vector(x, p.n)
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != p.q:
        raise ValueError(f"batch must be (Q, {p.q}), got {batch.shape}")
    Ys = np.asarray(y_tildes, dtype=float)
    if Ys.shape != (batch.shape[0], p.m):
        raise ValueError(f"y_tildes must be {(batch.shape[0], p.m)}, got {Ys.shape}")
    if batch.shape[0] < 1:
        raise ValueError("batch must hold at least one weight")

    can_batch = (
        p.has_ll_batch
        and p.grad_x_fu_batch is not None
        and p.grad_y_fu_batch is not None
    )
    if not can_batch:
        return _rn_direction_loop(p, x, batch, Ys, noise)

    Q = batch.shape[0]
    gx = perturb_gradient(np.asarray(p.grad_x_fu_batch(x, Ys), dtype=float), noise)
    gy = perturb_gradient(np.asarray(p.grad_y_fu_batch(x, Ys), dtype=float), noise)
    Hyy = batch[:, 0, None, None] * p.ll[0].hess_yy_batch(x, Ys)
    Hxy = batch[:, 0, None, None] * p.ll[0].hess_xy_batch(x, Ys)
    for j in range(1, p.q):
        Hyy = Hyy + batch[:, j, None, None] * p.ll[j].hess_yy_batch(x, Ys)
        Hxy = Hxy + batch[:, j, None, None] * p.ll[j].hess_xy_batch(x, Ys)
    Hyy = perturb_hessian_stack(Hyy, noise, require_pd=noise.sigma_hess > 0)
    Hxy = perturb_cross_hessian(Hxy, noise)
    try:
        np.linalg.cholesky(Hyy)
        mu = np.linalg.solve(Hyy, gy[..., None])[..., 0]
    except np.linalg.LinAlgError:
        # Only the noiseless-Hessian path can fail here (stochastic estimates
        # are floored); rerun sample by sample to tag the offending index.
        if noise.sigma_hess == 0 and noise.sigma_grad == 0:
            return _rn_direction_loop(p, x, batch, Ys, NoiseSpec.none())
        raise SingularHessianError("weighted Hessian stack not positive definite")
    per_sample = gx - np.einsum("qnm,qm->qn", Hxy, mu)
    return -per_sample.mean(axis=0)
