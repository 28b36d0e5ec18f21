"""Dense vector primitives, feasible-set projections, simplex sampling,
seeded randomness, and finite-difference test oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

Array = np.ndarray

#: Tolerance on the simplex sum invariant.
SIMPLEX_SUM_TOL = 1e-12

#: Half-infinite box sides are sampled on a window of this width anchored at
#: the finite bound; fully free coordinates use [-INIT_WINDOW, INIT_WINDOW].
INIT_WINDOW = 5.0

# Stream-id roles.  Seeds vary per trial, so one set of role ids is enough to
# keep every random consumer on its own reproducible stream.
STREAM_INIT_X = 1
STREAM_INIT_Y = 2
STREAM_GRID = 3
STREAM_BATCH = 4
STREAM_NOISE = 5
STREAM_PROBLEM = 6
STREAM_PROBE = 7


def as_vector(v, n: int | None = None, name: str = "vector") -> Array:
    """Coerce to a 1-D float array, optionally checking its length."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if n is not None and v.size != n:
        raise ValueError(f"{name} has length {v.size}, expected {n}")
    return v


def assert_simplex(w, tol: float = 1e-8, name: str = "weights") -> Array:
    """Validate that ``w`` lies on the probability simplex (within ``tol``)."""
    w = as_vector(w, name=name)
    if w.size == 0:
        raise ValueError(f"{name} must have at least one entry")
    if np.any(w < -tol):
        raise ValueError(f"{name} has negative entries: {w}")
    s = float(w.sum())
    if abs(s - 1.0) > max(tol, SIMPLEX_SUM_TOL):
        raise ValueError(f"{name} sums to {s}, expected 1")
    return w


@dataclass(frozen=True)
class BoxSet:
    """Per-coordinate bounds; infinite sides are allowed."""

    lower: Array
    upper: Array

    def __post_init__(self):
        lo = as_vector(self.lower, name="lower")
        hi = as_vector(self.upper, n=lo.size, name="upper")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @classmethod
    def from_bounds(cls, lower: float, upper: float, n: int) -> "BoxSet":
        return cls(np.full(n, float(lower)), np.full(n, float(upper)))

    @classmethod
    def free(cls, n: int) -> "BoxSet":
        return cls.from_bounds(-np.inf, np.inf, n)

    def contains(self, v, tol: float = 0.0) -> bool:
        v = as_vector(v, self.dim)
        return bool(np.all(v >= self.lower - tol) & np.all(v <= self.upper + tol))


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by ``(seed, stream)``.

    ``generator()`` always returns a fresh generator at the start of the
    stream, so identical ``(seed, stream)`` pairs reproduce identical draws.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.default_rng(ss)


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Accept either an RngStream (fresh stream) or a live Generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or Generator, got {type(rng)!r}")


def project_box(v, box: BoxSet) -> Array:
    """Componentwise clamp of ``v`` onto the box; idempotent."""
    v = as_vector(v, box.dim)
    return np.clip(v, box.lower, box.upper)


def project_simplex(v) -> Array:
    """Euclidean projection onto the probability simplex.

    Sort-and-threshold algorithm: finds tau such that
    sum(max(v_i - tau, 0)) = 1 and returns max(v - tau, 0).  The projection is
    invariant under shifts along the all-ones direction, so the input is
    anchored at its maximum first to keep the threshold search well scaled.
    """
    v = as_vector(v)
    q = v.size
    if q == 0:
        raise ValueError("cannot project an empty vector onto the simplex")
    shifted = v - v.max()
    u = np.sort(shifted)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, q + 1)
    thresh = (css - 1.0) / ks
    k = np.nonzero(u - thresh > 0)[0][-1]
    return np.maximum(shifted - thresh[k], 0.0)


def sample_weight_grid(q: int, N: int, rng: RngLike) -> Array:
    """Draw ``N`` weights uniformly from the (q-1)-simplex.

    Uses the sorted-uniform-spacings construction, which is uniform on the
    simplex for any q.  Returns an (N, q) array; rows sum to 1 exactly up to
    floating-point cancellation.
    """
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    gen = as_generator(rng)
    cuts = np.sort(gen.random((N, q - 1)), axis=1)
    return np.diff(cuts, axis=1, prepend=0.0, append=1.0)


def sample_minibatch(grid, Q: int, rng: RngLike) -> Array:
    """Sample ``Q`` rows uniformly without replacement from a weight grid."""
    grid = np.asarray(grid, dtype=float)
    N = grid.shape[0]
    if not 1 <= Q <= N:
        raise ValueError(f"Q must satisfy 1 <= Q <= {N}, got {Q}")
    idx = as_generator(rng).choice(N, size=Q, replace=False)
    return grid[idx]


def _step(x_i: float, h: float | None) -> float:
    return h if h is not None else 1e-6 * max(1.0, abs(x_i))


def finite_diff_grad(f: Callable[[Array], float], x, h: float | None = None) -> Array:
    """Central-difference gradient of a scalar function.

    With ``h=None`` the step is 1e-6 relative to max(1, |x_i|) per coordinate.
    """
    if h is not None and h <= 0:
        raise ValueError("h must be positive")
    x = as_vector(x)
    g = np.empty_like(x)
    for i in range(x.size):
        hi = _step(x[i], h)
        e = np.zeros_like(x)
        e[i] = hi
        fp = float(f(x + e))
        fm = float(f(x - e))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("non-finite evaluation in finite_diff_grad")
        g[i] = (fp - fm) / (2.0 * hi)
    return g


def finite_diff_jacobian(f: Callable[[Array], Array], x, h: float | None = None) -> Array:
    """Central-difference Jacobian J[i, j] = d f_i / d x_j of a vector function."""
    if h is not None and h <= 0:
        raise ValueError("h must be positive")
    x = as_vector(x)
    f0 = np.asarray(f(x), dtype=float)
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        hj = _step(x[j], h)
        e = np.zeros_like(x)
        e[j] = hj
        fp = np.asarray(f(x + e), dtype=float)
        fm = np.asarray(f(x - e), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise FloatingPointError("non-finite evaluation in finite_diff_jacobian")
        J[:, j] = (fp - fm) / (2.0 * hj)
    return J
