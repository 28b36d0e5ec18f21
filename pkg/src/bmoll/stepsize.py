"""Stepsize rules shared by the upper- and lower-level loops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import Array


@dataclass(frozen=True)
class ArmijoParams:
    initial: float = 1.0
    contraction: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 30

    def __post_init__(self):
        if self.initial <= 0:
            raise ValueError("initial must be > 0")
        if not 0.0 < self.contraction < 1.0:
            raise ValueError("contraction must be in (0, 1)")
        if not 0.0 < self.sufficient_decrease < 1.0:
            raise ValueError("sufficient_decrease must be in (0, 1)")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be >= 1")


@dataclass(frozen=True)
class StepsizeRule:
    """Either a fixed stepsize or backtracking-Armijo parameters."""

    kind: str
    fixed_value: float = 0.0
    armijo_params: ArmijoParams | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "armijo"):
            raise ValueError(f"kind must be 'fixed' or 'armijo', got {self.kind!r}")
        if self.kind == "fixed" and self.fixed_value <= 0:
            raise ValueError("fixed_value must be > 0")
        if self.kind == "armijo" and self.armijo_params is None:
            object.__setattr__(self, "armijo_params", ArmijoParams())

    @classmethod
    def fixed(cls, value: float) -> "StepsizeRule":
        return cls(kind="fixed", fixed_value=float(value))

    @classmethod
    def armijo(cls, initial: float = 1.0, contraction: float = 0.5,
               sufficient_decrease: float = 1e-4, max_backtracks: int = 30) -> "StepsizeRule":
        return cls(kind="armijo",
                   armijo_params=ArmijoParams(initial, contraction,
                                              sufficient_decrease, max_backtracks))


class ArmijoResult(NamedTuple):
    alpha: float
    accepted: bool
    n_trials: int
    f_new: float


def armijo_search(
    f_true: Callable[[Array], float],
    point,
    direction,
    rule: StepsizeRule,
    f0: float | None = None,
) -> ArmijoResult:
    """Backtracking line search on the geometric grid initial * contraction^k.

    Accepts the largest trial alpha with
    f_true(point + alpha d) <= f_true(point) - sufficient_decrease * alpha * |d|^2.
    If no trial passes within max_backtracks the smallest trial is returned
    with ``accepted=False``; a zero direction likewise returns flagged.
    """
    if rule.kind != "armijo":
        raise ValueError("armijo_search requires an armijo rule")
    ap = rule.armijo_params
    point = np.asarray(point, dtype=float)
    d = np.asarray(direction, dtype=float)
    if f0 is None:
        f0 = float(f_true(point))
    dn2 = float(d @ d)
    if dn2 == 0.0:
        return ArmijoResult(ap.initial, False, 0, f0)
    alpha = ap.initial
    f_t = f0
    for k in range(ap.max_backtracks):
        f_t = float(f_true(point + alpha * d))
        if not np.isfinite(f_t):
            raise FloatingPointError("non-finite evaluation in armijo_search")
        if f_t <= f0 - ap.sufficient_decrease * alpha * dn2:
            return ArmijoResult(alpha, True, k + 1, f_t)
        if k < ap.max_backtracks - 1:
            alpha *= ap.contraction
    return ArmijoResult(alpha, False, ap.max_backtracks, f_t)
