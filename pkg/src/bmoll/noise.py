"""Stochastic oracle layer: Gaussian-perturbed gradient and Hessian estimates
with a positive-definiteness safeguard for the symmetric blocks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Array, RngStream

#: Eigenvalue floor applied when a positive-definite estimate is required.
PD_FLOOR = 1e-6

_SYM_TOL = 1e-9


@dataclass
class NoiseSpec:
    """Gaussian perturbation magnitudes plus the stream that feeds them.

    ``sigma_grad`` scales gradient noise, ``sigma_hess`` Hessian noise.  A
    zero-sigma spec is exactly the deterministic oracle: the input arrays are
    returned unchanged and no random numbers are consumed.
    """

    sigma_grad: float = 0.0
    sigma_hess: float = 0.0
    rng: RngStream | None = None
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("sigma_grad", "sigma_hess"):
            s = float(getattr(self, name))
            if not np.isfinite(s) or s < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {s}")
            setattr(self, name, s)
        if self.is_zero is False and self.rng is None:
            raise ValueError("a nonzero NoiseSpec needs an RngStream")

    @property
    def is_zero(self) -> bool:
        return self.sigma_grad == 0.0 and self.sigma_hess == 0.0

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = self.rng.generator()
        return self._gen

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls(0.0, 0.0, None)


def perturb_gradient(g, spec: NoiseSpec) -> Array:
    """Return g + e with e ~ N(0, sigma_grad^2 I); identity when sigma is 0.

    Works on arrays of any shape (batched draws are independent per entry).
    """
    g = np.asarray(g, dtype=float)
    if spec.sigma_grad == 0.0:
        return g
    return g + spec.gen.normal(0.0, spec.sigma_grad, size=g.shape)


def _check_symmetric(H: Array):
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    scale = 1.0 + float(np.max(np.abs(H)))
    HT = np.swapaxes(H, -1, -2)
    if float(np.max(np.abs(H - HT))) > _SYM_TOL * scale:
        raise ValueError("perturb_hessian requires a symmetric input")


def _clip_eigenvalues(H: Array, floor: float) -> Array:
    w, V = np.linalg.eigh(H)
    if w.min() >= floor:
        return H
    w = np.maximum(w, floor)
    out = (V * w) @ V.T
    return (out + out.T) / 2.0


def perturb_hessian(H, spec: NoiseSpec, require_pd: bool = False) -> Array:
    """Symmetric Gaussian perturbation of a symmetric matrix.

    The raw entry noise is N(0, sigma_hess^2), symmetrized.  With
    ``require_pd`` the eigenvalues of the estimate are floored at PD_FLOOR so
    the result is positive definite; inputs already above the floor pass
    through unchanged.
    """
    H = np.asarray(H, dtype=float)
    _check_symmetric(H)
    if spec.sigma_hess > 0.0:
        E = spec.gen.normal(0.0, spec.sigma_hess, size=H.shape)
        H = H + (E + E.T) / 2.0
    if require_pd:
        H = _clip_eigenvalues(H, PD_FLOOR)
    return H


def perturb_cross_hessian(H, spec: NoiseSpec) -> Array:
    """Entrywise Gaussian perturbation for rectangular mixed-derivative blocks."""
    H = np.asarray(H, dtype=float)
    if spec.sigma_hess == 0.0:
        return H
    return H + spec.gen.normal(0.0, spec.sigma_hess, size=H.shape)


def perturb_hessian_stack(Hs, spec: NoiseSpec, require_pd: bool = False) -> Array:
    """Batched :func:`perturb_hessian` over a (K, m, m) stack.

    Draws are independent per stack member.  Eigenvalue clipping is applied
    only to members that actually violate the floor, so the no-noise PD case
    returns the input unchanged.
    """
    Hs = np.asarray(Hs, dtype=float)
    if Hs.ndim != 3 or Hs.shape[-1] != Hs.shape[-2]:
        raise ValueError(f"expected a (K, m, m) stack, got shape {Hs.shape}")
    if spec.sigma_hess > 0.0:
        E = spec.gen.normal(0.0, spec.sigma_hess, size=Hs.shape)
        Hs = Hs + (E + np.swapaxes(E, -1, -2)) / 2.0
    if require_pd:
        w = np.linalg.eigvalsh(Hs)
        bad = np.nonzero(w[:, 0] < PD_FLOOR)[0]
        if bad.size:
            Hs = np.array(Hs, copy=True)
            for k in bad:
                Hs[k] = _clip_eigenvalues(Hs[k], PD_FLOOR)
    return Hs
