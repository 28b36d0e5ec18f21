"""Bilevel problem oracles: quadratic upper level plus the JOS1, SP1, and
GKV1 lower-level families, with seeded instance generators.

Lower-level objectives are indexed 0-based: objective ``j`` is the (j+1)-th
component of the vector objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    INIT_WINDOW,
    STREAM_PROBLEM,
    Array,
    BoxSet,
    RngLike,
    RngStream,
    as_generator,
    as_vector,
)

#: Diagonal shift used when generating random SPD matrices.
SPD_SHIFT = 0.1

PROBLEM_KEYS = ("jos1", "sp1", "gkv1-sep", "gkv1-nonsep")


@dataclass(frozen=True)
class QuadraticUL:
    """Upper-level objective h1.x + h2.y + x.H1 y / 2 + x.H2 x / 2."""

    h1: Array
    h2: Array
    H1: Array
    H2: Array

    def __post_init__(self):
        h1 = as_vector(self.h1, name="h1")
        h2 = as_vector(self.h2, name="h2")
        n, m = h1.size, h2.size
        H1 = np.asarray(self.H1, dtype=float)
        H2 = np.asarray(self.H2, dtype=float)
        if H1.shape != (n, m):
            raise ValueError(f"H1 must be {(n, m)}, got {H1.shape}")
        if H2.shape != (n, n):
            raise ValueError(f"H2 must be {(n, n)}, got {H2.shape}")
        if not np.allclose(H2, H2.T, atol=1e-10, rtol=1e-10):
            raise ValueError("H2 must be symmetric")
        if np.linalg.eigvalsh(H2).min() <= 0:
            raise ValueError("H2 must be positive definite")
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "h2", h2)
        object.__setattr__(self, "H1", H1)
        object.__setattr__(self, "H2", H2)

    @property
    def n(self) -> int:
        return self.h1.size

    @property
    def m(self) -> int:
        return self.h2.size

    def value(self, x, y) -> float:
        x, y = as_vector(x, self.n), as_vector(y, self.m)
        return float(self.h1 @ x + self.h2 @ y + 0.5 * x @ (self.H1 @ y) + 0.5 * x @ (self.H2 @ x))

    def grad_x(self, x, y) -> Array:
        x, y = as_vector(x, self.n), as_vector(y, self.m)
        return self.h1 + 0.5 * (self.H1 @ y) + self.H2 @ x

    def grad_y(self, x, y) -> Array:
        x = as_vector(x, self.n)
        return self.h2 + 0.5 * (self.H1.T @ x)

    # Batched variants over a (K, m) stack of y values at a single x.
    def value_batch(self, x, Y) -> Array:
        x = as_vector(x, self.n)
        Y = np.asarray(Y, dtype=float)
        const = float(self.h1 @ x + 0.5 * x @ (self.H2 @ x))
        return const + Y @ self.h2 + 0.5 * (Y @ (self.H1.T @ x))

    def grad_x_batch(self, x, Y) -> Array:
        x = as_vector(x, self.n)
        Y = np.asarray(Y, dtype=float)
        return (self.h1 + self.H2 @ x)[None, :] + 0.5 * (Y @ self.H1.T)

    def grad_y_batch(self, x, Y) -> Array:
        g = self.grad_y(x, np.zeros(self.m))
        return np.broadcast_to(g, (np.asarray(Y).shape[0], self.m))


@dataclass(frozen=True)
class LLObjective:
    """One lower-level objective: value, y-gradient, and second derivatives.

    ``hess_xy(x, y)`` is the (n, m) block with entries d^2 f / dx_a dy_b;
    ``hess_yy(x, y)`` is the symmetric (m, m) block.  The ``*_batch``
    callbacks, when present, evaluate over a (K, m) stack of y values at one x
    and return shapes (K,), (K, m), (K, n, m), (K, m, m).
    """

    value: Callable[[Array, Array], float]
    grad_y: Callable[[Array, Array], Array]
    hess_xy: Callable[[Array, Array], Array]
    hess_yy: Callable[[Array, Array], Array]
    value_batch: Optional[Callable] = None
    grad_y_batch: Optional[Callable] = None
    hess_xy_batch: Optional[Callable] = None
    hess_yy_batch: Optional[Callable] = None


@dataclass(frozen=True)
class GKV1Params:
    """Quadratic lower-level family 0.5 y.H3 y - 0.5 y.H4 x / 0.5 y.H5 y + 0.5 y.H6 x."""

    H3: Array
    H4: Array
    H5: Array
    H6: Array

    def __post_init__(self):
        H3 = np.asarray(self.H3, dtype=float)
        H5 = np.asarray(self.H5, dtype=float)
        m = H3.shape[0]
        H4 = np.asarray(self.H4, dtype=float)
        H6 = np.asarray(self.H6, dtype=float)
        for name, M in (("H3", H3), ("H5", H5)):
            if M.shape != (m, m) or not np.allclose(M, M.T, atol=1e-10, rtol=1e-10):
                raise ValueError(f"{name} must be symmetric {m}x{m}")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        if H4.shape != H6.shape or H4.shape[0] != m:
            raise ValueError("H4 and H6 must both be (m, n)")
        object.__setattr__(self, "H3", H3)
        object.__setattr__(self, "H4", H4)
        object.__setattr__(self, "H5", H5)
        object.__setattr__(self, "H6", H6)


@dataclass(frozen=True)
class BilevelProblem:
    """Oracle bundle for one bilevel instance.

    Exposes the upper-level value and gradients plus, for each lower-level
    objective, value / y-gradient / mixed and pure second derivatives.
    ``ll_solution``, when present, is the closed-form weighted-sum minimizer
    y(x, lam) used by test oracles and high-accuracy evaluators.
    """

    name: str
    n: int
    m: int
    q: int
    ul_box: BoxSet
    f_u: Callable[[Array, Array], float]
    grad_x_fu: Callable[[Array, Array], Array]
    grad_y_fu: Callable[[Array, Array], Array]
    ll: tuple[LLObjective, ...]
    f_u_batch: Optional[Callable] = None
    grad_x_fu_batch: Optional[Callable] = None
    grad_y_fu_batch: Optional[Callable] = None
    ll_solution: Optional[Callable] = None
    ll_solution_grid: Optional[Callable] = None

    def __post_init__(self):
        if len(self.ll) != self.q:
            raise ValueError(f"expected {self.q} lower-level objectives, got {len(self.ll)}")
        if self.ul_box.dim != self.n:
            raise ValueError("ul_box dimension must match n")

    def ul_oracle(self, x, y) -> tuple[float, Array, Array]:
        """Upper-level (value, grad_x, grad_y) at (x, y)."""
        x, y = as_vector(x, self.n), as_vector(y, self.m)
        return self.f_u(x, y), self.grad_x_fu(x, y), self.grad_y_fu(x, y)

    def ll_oracle(self, j: int, x, y) -> tuple[float, Array, Array, Array]:
        """Objective j's (value, grad_y, hess_xy, hess_yy) at (x, y)."""
        if not 0 <= j < self.q:
            raise ValueError(f"objective index {j} out of range [0, {self.q})")
        x, y = as_vector(x, self.n), as_vector(y, self.m)
        o = self.ll[j]
        return o.value(x, y), o.grad_y(x, y), o.hess_xy(x, y), o.hess_yy(x, y)

    @property
    def has_ll_batch(self) -> bool:
        return all(
            o.value_batch is not None and o.grad_y_batch is not None
            and o.hess_xy_batch is not None and o.hess_yy_batch is not None
            for o in self.ll
        )


def make_spd(n: int, rng: RngLike) -> Array:
    """Random symmetric positive definite matrix A.T A + SPD_SHIFT * I."""
    if n < 1:
        raise ValueError("n must be >= 1")
    A = as_generator(rng).standard_normal((n, n))
    M = A.T @ A + SPD_SHIFT * np.eye(n)
    return (M + M.T) / 2.0


def initial_point(box: BoxSet, rng: RngLike) -> Array:
    """Uniform draw within the box; unbounded sides use an INIT_WINDOW window
    anchored at the finite bound (symmetric around 0 when both are infinite)."""
    gen = as_generator(rng)
    lo, hi = box.lower, box.upper
    out = np.empty(box.dim)
    for i in range(box.dim):
        lo_f, hi_f = np.isfinite(lo[i]), np.isfinite(hi[i])
        if lo_f and hi_f:
            out[i] = gen.uniform(lo[i], hi[i]) if hi[i] > lo[i] else lo[i]
        elif lo_f:
            out[i] = gen.uniform(lo[i], lo[i] + INIT_WINDOW)
        elif hi_f:
            out[i] = gen.uniform(hi[i] - INIT_WINDOW, hi[i])
        else:
            out[i] = gen.uniform(-INIT_WINDOW, INIT_WINDOW)
    return out


def _diag_stack(vals: Array, n: int, m: int) -> Array:
    """Embed per-coordinate values (K, min(n, m)) on the diagonal of (K, n, m)."""
    K = vals.shape[0]
    out = np.zeros((K, n, m))
    idx = np.arange(min(n, m))
    out[:, idx, idx] = vals
    return out


def _jos1_objectives(n_bar: int) -> tuple[LLObjective, LLObjective]:
    s = 1.0 / n_bar

    def f1(x, y):
        return s * float(np.sum(x**2 * y**2))

    def f1_gy(x, y):
        return 2.0 * s * x**2 * y

    def f1_hxy(x, y):
        return np.diag(4.0 * s * x * y)

    def f1_hyy(x, y):
        return np.diag(2.0 * s * x**2)

    def f2(x, y):
        return s * float(np.sum((x - 2.0) ** 2 * (y - 2.0) ** 2))

    def f2_gy(x, y):
        return 2.0 * s * (x - 2.0) ** 2 * (y - 2.0)

    def f2_hxy(x, y):
        return np.diag(4.0 * s * (x - 2.0) * (y - 2.0))

    def f2_hyy(x, y):
        return np.diag(2.0 * s * (x - 2.0) ** 2)

    def f1_b(x, Y):
        return s * np.sum(x**2 * Y**2, axis=1)

    def f1_gy_b(x, Y):
        return 2.0 * s * x**2 * Y

    def f1_hxy_b(x, Y):
        return _diag_stack(4.0 * s * x * Y, n_bar, n_bar)

    def f1_hyy_b(x, Y):
        D = np.diag(2.0 * s * x**2)
        return np.broadcast_to(D, (Y.shape[0], n_bar, n_bar))

    def f2_b(x, Y):
        return s * np.sum((x - 2.0) ** 2 * (Y - 2.0) ** 2, axis=1)

    def f2_gy_b(x, Y):
        return 2.0 * s * (x - 2.0) ** 2 * (Y - 2.0)

    def f2_hxy_b(x, Y):
        return _diag_stack(4.0 * s * (x - 2.0) * (Y - 2.0), n_bar, n_bar)

    def f2_hyy_b(x, Y):
        D = np.diag(2.0 * s * (x - 2.0) ** 2)
        return np.broadcast_to(D, (Y.shape[0], n_bar, n_bar))

    o1 = LLObjective(f1, f1_gy, f1_hxy, f1_hyy, f1_b, f1_gy_b, f1_hxy_b, f1_hyy_b)
    o2 = LLObjective(f2, f2_gy, f2_hxy, f2_hyy, f2_b, f2_gy_b, f2_hxy_b, f2_hyy_b)
    return o1, o2


def _sp1_objectives(n_bar: int) -> tuple[LLObjective, LLObjective]:
    I2 = 2.0 * np.eye(n_bar)

    def f1(x, y):
        return float(np.sum((x - 1.0) ** 2 + (x - y) ** 2))

    def f1_gy(x, y):
        return 2.0 * (y - x)

    def f2(x, y):
        return float(np.sum((y - 3.0) ** 2 + (x - y) ** 2))

    def f2_gy(x, y):
        return 2.0 * (y - 3.0) + 2.0 * (y - x)

    def const(M):
        def h(x, y):
            return M

        def h_b(x, Y):
            return np.broadcast_to(M, (Y.shape[0],) + M.shape)

        return h, h_b

    f1_hxy, f1_hxy_b = const(-I2)
    f1_hyy, f1_hyy_b = const(I2)
    f2_hxy, f2_hxy_b = const(-I2)
    f2_hyy, f2_hyy_b = const(2.0 * I2)

    def f1_b(x, Y):
        return float(np.sum((x - 1.0) ** 2)) + np.sum((x - Y) ** 2, axis=1)

    def f1_gy_b(x, Y):
        return 2.0 * (Y - x)

    def f2_b(x, Y):
        return np.sum((Y - 3.0) ** 2 + (x - Y) ** 2, axis=1)

    def f2_gy_b(x, Y):
        return 2.0 * (Y - 3.0) + 2.0 * (Y - x)

    o1 = LLObjective(f1, f1_gy, f1_hxy, f1_hyy, f1_b, f1_gy_b, f1_hxy_b, f1_hyy_b)
    o2 = LLObjective(f2, f2_gy, f2_hxy, f2_hyy, f2_b, f2_gy_b, f2_hxy_b, f2_hyy_b)
    return o1, o2


def _gkv1_objectives(params: GKV1Params) -> tuple[LLObjective, LLObjective]:
    H3, H4, H5, H6 = params.H3, params.H4, params.H5, params.H6

    def f1(x, y):
        return float(0.5 * y @ (H3 @ y) - 0.5 * y @ (H4 @ x))

    def f1_gy(x, y):
        return H3 @ y - 0.5 * (H4 @ x)

    def f2(x, y):
        return float(0.5 * y @ (H5 @ y) + 0.5 * y @ (H6 @ x))

    def f2_gy(x, y):
        return H5 @ y + 0.5 * (H6 @ x)

    def const(M):
        def h(x, y):
            return M

        def h_b(x, Y):
            return np.broadcast_to(M, (Y.shape[0],) + M.shape)

        return h, h_b

    f1_hxy, f1_hxy_b = const(-0.5 * H4.T)
    f1_hyy, f1_hyy_b = const(H3)
    f2_hxy, f2_hxy_b = const(0.5 * H6.T)
    f2_hyy, f2_hyy_b = const(H5)

    def f1_b(x, Y):
        return 0.5 * np.sum(Y * (Y @ H3.T), axis=1) - 0.5 * (Y @ (H4 @ x))

    def f1_gy_b(x, Y):
        return Y @ H3.T - 0.5 * (H4 @ x)[None, :]

    def f2_b(x, Y):
        return 0.5 * np.sum(Y * (Y @ H5.T), axis=1) + 0.5 * (Y @ (H6 @ x))

    def f2_gy_b(x, Y):
        return Y @ H5.T + 0.5 * (H6 @ x)[None, :]

    o1 = LLObjective(f1, f1_gy, f1_hxy, f1_hyy, f1_b, f1_gy_b, f1_hxy_b, f1_hyy_b)
    o2 = LLObjective(f2, f2_gy, f2_hxy, f2_hyy, f2_b, f2_gy_b, f2_hxy_b, f2_hyy_b)
    return o1, o2


def _problem_from_ul(name, n_bar, ul, objectives, box, ll_solution, ll_solution_grid):
    return BilevelProblem(
        name=name,
        n=n_bar,
        m=n_bar,
        q=len(objectives),
        ul_box=box,
        f_u=ul.value,
        grad_x_fu=ul.grad_x,
        grad_y_fu=ul.grad_y,
        ll=tuple(objectives),
        f_u_batch=ul.value_batch,
        grad_x_fu_batch=ul.grad_x_batch,
        grad_y_fu_batch=ul.grad_y_batch,
        ll_solution=ll_solution,
        ll_solution_grid=ll_solution_grid,
    )


def _default_ul(n_bar: int, h1_scale: float = 1.0) -> QuadraticUL:
    return QuadraticUL(
        h1=h1_scale * np.ones(n_bar),
        h2=np.ones(n_bar),
        H1=np.eye(n_bar),
        H2=np.eye(n_bar),
    )


def jos1_closed_form(x, lam) -> Array:
    """Weighted-sum minimizer y_i = 2 l2 (x_i-2)^2 / (l1 x_i^2 + l2 (x_i-2)^2)."""
    x = as_vector(x)
    lam = as_vector(lam, 2)
    denom = lam[0] * x**2 + lam[1] * (x - 2.0) ** 2
    if np.any(np.abs(denom) < 1e-14):
        raise ValueError("closed form undefined: weighted curvature vanishes")
    return 2.0 * lam[1] * (x - 2.0) ** 2 / denom


def sp1_closed_form(x, lam) -> Array:
    """Weighted-sum minimizer y = ((l1 + l2) x + 3 l2) / (l1 + 2 l2).

    On the simplex this reduces to (x + 3 l2) / (1 + l2); the general form
    stays valid for off-simplex weights (as probed by finite differences).
    """
    x = as_vector(x)
    lam = as_vector(lam, 2)
    denom = lam[0] + 2.0 * lam[1]
    if abs(denom) < 1e-14:
        raise ValueError("closed form undefined: weighted curvature vanishes")
    return ((lam[0] + lam[1]) * x + 3.0 * lam[1]) / denom


def gkv1_closed_form(params: GKV1Params, x, lam) -> Array:
    """Weighted-sum minimizer solving (l1 H3 + l2 H5) y = (l1 H4 - l2 H6) x / 2."""
    x = as_vector(x)
    lam = as_vector(lam, 2)
    A = lam[0] * params.H3 + lam[1] * params.H5
    b = 0.5 * (lam[0] * params.H4 - lam[1] * params.H6) @ x
    return np.linalg.solve(A, b)


def make_jos1(n_bar: int, ul: QuadraticUL | None = None) -> BilevelProblem:
    ul = ul if ul is not None else _default_ul(n_bar)
    box = BoxSet.from_bounds(-2.0, np.inf, n_bar)

    def sol(x, lam):
        return jos1_closed_form(x, lam)

    def sol_grid(x, lams):
        lams = np.asarray(lams, dtype=float)
        x = as_vector(x, n_bar)
        denom = lams[:, 0:1] * x**2 + lams[:, 1:2] * (x - 2.0) ** 2
        if np.any(np.abs(denom) < 1e-14):
            raise ValueError("closed form undefined: weighted curvature vanishes")
        return 2.0 * lams[:, 1:2] * (x - 2.0) ** 2 / denom

    return _problem_from_ul("jos1", n_bar, ul, _jos1_objectives(n_bar), box, sol, sol_grid)


def make_sp1(n_bar: int, ul: QuadraticUL | None = None) -> BilevelProblem:
    ul = ul if ul is not None else _default_ul(n_bar)
    box = BoxSet.from_bounds(-2.0, 3.0, n_bar)

    def sol(x, lam):
        return sp1_closed_form(x, lam)

    def sol_grid(x, lams):
        lams = np.asarray(lams, dtype=float)
        x = as_vector(x, n_bar)
        denom = lams[:, 0:1] + 2.0 * lams[:, 1:2]
        return ((lams[:, 0:1] + lams[:, 1:2]) * x + 3.0 * lams[:, 1:2]) / denom

    return _problem_from_ul("sp1", n_bar, ul, _sp1_objectives(n_bar), box, sol, sol_grid)


def make_gkv1(
    n_bar: int,
    params: GKV1Params,
    ul: QuadraticUL,
    box: BoxSet,
    name: str = "gkv1",
) -> BilevelProblem:
    def sol(x, lam):
        return gkv1_closed_form(params, x, lam)

    def sol_grid(x, lams):
        lams = np.asarray(lams, dtype=float)
        x = as_vector(x, n_bar)
        A = lams[:, 0, None, None] * params.H3 + lams[:, 1, None, None] * params.H5
        b = 0.5 * (
            lams[:, 0:1] * (params.H4 @ x)[None, :] - lams[:, 1:2] * (params.H6 @ x)[None, :]
        )
        return np.linalg.solve(A, b[..., None])[..., 0]

    return _problem_from_ul(name, n_bar, ul, _gkv1_objectives(params), box, sol, sol_grid)


def make_gkv1_sep(n_bar: int) -> BilevelProblem:
    I = np.eye(n_bar)
    params = GKV1Params(H3=I, H4=I, H5=I, H6=I)
    ul = _default_ul(n_bar, h1_scale=3.0)
    box = BoxSet.from_bounds(-np.inf, 0.0, n_bar)
    return make_gkv1(n_bar, params, ul, box, name="gkv1-sep")


def make_gkv1_nonsep(n_bar: int, data_rng: RngLike) -> BilevelProblem:
    gen = as_generator(data_rng)
    I = np.eye(n_bar)
    params = GKV1Params(H3=make_spd(n_bar, gen), H4=I, H5=make_spd(n_bar, gen), H6=I)
    ul = QuadraticUL(
        h1=gen.uniform(-5.0, 0.0, n_bar),
        h2=gen.uniform(-3.0, 0.0, n_bar),
        H1=np.eye(n_bar),
        H2=np.eye(n_bar),
    )
    box = BoxSet.from_bounds(0.0, np.inf, n_bar)
    return make_gkv1(n_bar, params, ul, box, name="gkv1-nonsep")


def problem_from_key(key: str, n_bar: int, data_seed: int = 0) -> BilevelProblem:
    """Instantiate one of the shipped problems by CLI key."""
    if key == "jos1":
        return make_jos1(n_bar)
    if key == "sp1":
        return make_sp1(n_bar)
    if key == "gkv1-sep":
        return make_gkv1_sep(n_bar)
    if key == "gkv1-nonsep":
        return make_gkv1_nonsep(n_bar, RngStream(data_seed, STREAM_PROBLEM))
    raise ValueError(f"unknown problem key {key!r}; expected one of {PROBLEM_KEYS}")
