"""Pointwise material densities and their analytic derivatives.

Stored energy (frame indifferent, vanishing on rotations)::

    W(F) = alpha_W |F^T F - I|^2 + beta_W h_q(det F),   h_q(s) = s^-q + q s - (q + 1)

Strain-gradient energy ``P(G) = kappa_P / p |G|^p``, viscous potential
``R(F, Fdot) = |A Cdot|^p_tilde / p_tilde`` with ``Cdot = Fdot^T F + F^T Fdot`` and
pointwise dissipation distance ``D(F1, F2) = |A (F1^T F1 - F2^T F2)|``.

All evaluators accept a single matrix or a stack with leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import tensor
from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class MaterialParams:
    """Model constants.  ``c0`` and ``C0`` default to the extreme singular values of ``A``."""

    d: int = 2
    p: float = 4.0
    p_tilde: float = 2.0
    q: float = 4.0
    alpha_W: float = 1.0
    beta_W: float = 0.5
    kappa_P: float = 0.01
    A: np.ndarray = field(default_factory=lambda: np.eye(2))
    c0: float | None = None
    C0: float | None = None
    delta: float = 0.0

    def __post_init__(self):
        A = np.array(self.A, dtype=float).reshape(self.d, self.d) if np.size(self.A) == self.d**2 else None
        if self.d not in (1, 2):
            raise ValidationError("d must be 1 or 2, got %r" % (self.d,))
        if A is None:
            raise ValidationError("A must be a %dx%d matrix" % (self.d, self.d))
        if not np.all(np.isfinite(A)) or abs(tensor.det(A)) <= tensor.SINGULAR_THRESHOLD:
            raise ValidationError("A must be finite and invertible")
        if not self.p > self.d:
            raise ValidationError("p must exceed d")
        if self.d == 1 and not self.p > 2:
            raise ValidationError("p must exceed 2 for d = 1")
        if self.q < self.p * self.d / (self.p - self.d):
            raise ValidationError("q must be at least p d / (p - d) = %g" % (self.p * self.d / (self.p - self.d)))
        if not self.p_tilde > 1:
            raise ValidationError("p_tilde must exceed 1")
        if self.alpha_W < 0 or self.beta_W < 0:
            raise ValidationError("alpha_W and beta_W must be nonnegative")
        if not self.kappa_P > 0:
            raise ValidationError("kappa_P must be positive")
        if self.delta < 0:
            raise ValidationError("delta must be nonnegative")
        sv = np.linalg.svd(A, compute_uv=False)
        object.__setattr__(self, "A", A)
        if self.c0 is None:
            object.__setattr__(self, "c0", float(sv.min()))
        if self.C0 is None:
            object.__setattr__(self, "C0", float(sv.max()))

    @cached_property
    def AtA(self) -> np.ndarray:
        return self.A.T @ self.A

    def replace(self, **changes) -> "MaterialParams":
        """Copy with some fields changed (recorded bounds are recomputed unless given)."""
        kw = dict(d=self.d, p=self.p, p_tilde=self.p_tilde, q=self.q, alpha_W=self.alpha_W,
                  beta_W=self.beta_W, kappa_P=self.kappa_P, A=self.A, delta=self.delta)
        kw.update(changes)
        return MaterialParams(**kw)

    def to_dict(self) -> dict:
        return {
            "d": self.d, "p": self.p, "p_tilde": self.p_tilde, "q": self.q,
            "alpha_W": self.alpha_W, "beta_W": self.beta_W, "kappa_P": self.kappa_P,
            "A": self.A.tolist(), "c0": self.c0, "C0": self.C0, "delta": self.delta,
        }


@dataclass(frozen=True)
class DensityEval:
    """Density value and its derivative with respect to the density's matrix argument."""

    value: float | np.ndarray
    deriv: np.ndarray

    # named aliases matching the argument each density differentiates in
    @property
    def dF(self):
        return self.deriv

    @property
    def dG(self):
        return self.deriv

    @property
    def dFdot(self):
        return self.deriv


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def barrier(params: MaterialParams, s):
    """h_q(s) for s > 0."""
    q = params.q
    return s ** (-q) + q * s - (q + 1.0)


def barrier_prime(params: MaterialParams, s):
    q = params.q
    return -q * s ** (-q - 1.0) + q


def W_value(params: MaterialParams, F: np.ndarray) -> np.ndarray:
    """Stored energy per cell; +inf where det F <= 0."""
    F = np.asarray(F, dtype=float)
    E = tensor.cauchy_green(F) - np.eye(F.shape[-1])
    s = tensor.det(F)
    out = np.full(s.shape, np.inf)
    ok = s > 0
    sp = np.where(ok, s, 1.0)
    vals = params.alpha_W * np.sum(E * E, axis=(-1, -2)) + params.beta_W * barrier(params, sp)
    return np.where(ok, vals, out)


def W_eval(params: MaterialParams, F: np.ndarray) -> DensityEval:
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    s = tensor.det(F)
    ok = s > 0
    E = tensor.cauchy_green(F) - np.eye(d)
    sp = np.where(ok, s, 1.0)
    # d(det)/dF = cof(F) = det F * F^{-T}
    dF = 4.0 * params.alpha_W * (F @ E) + (params.beta_W * barrier_prime(params, sp))[..., None, None] * tensor.cofactor(F)
    dF = np.where(ok[..., None, None], dF, np.nan)
    return DensityEval(_scalar(W_value(params, F)), dF)


def W_increment(params: MaterialParams, F: np.ndarray, dF: np.ndarray) -> np.ndarray:
    """W(F + dF) - W(F) per cell, accurate when the increment is tiny."""
    d = F.shape[-1]
    E2 = 2.0 * (tensor.cauchy_green(F) - np.eye(d))
    X = np.swapaxes(dF, -1, -2) @ F
    dC = X + np.swapaxes(X, -1, -2) + tensor.cauchy_green(dF)
    dE = params.alpha_W * np.sum(dC * (E2 + dC), axis=(-1, -2))
    s = tensor.det(F)
    ds = tensor.det_increment(F, dF)
    ok = (s + ds > 0) & (s > 0)
    q = params.q
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        r = np.where(ok, ds / np.where(ok, s, 1.0), 0.0)
        dh = np.where(ok, s ** (-q) * np.expm1(-q * np.log1p(r)) + q * ds, 0.0)
    return np.where(ok, dE + params.beta_W * dh, np.inf)


def P_value(params: MaterialParams, G: np.ndarray) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    nrm2 = np.sum(G * G, axis=(-1, -2, -3))
    return params.kappa_P / params.p * nrm2 ** (params.p / 2.0)


def P_eval(params: MaterialParams, G: np.ndarray) -> DensityEval:
    G = np.asarray(G, dtype=float)
    nrm = np.sqrt(np.sum(G * G, axis=(-1, -2, -3)))
    # p > 2 so |G|^{p-2} G is continuous and vanishes at G = 0
    dG = (params.kappa_P * nrm ** (params.p - 2.0))[..., None, None, None] * G
    return DensityEval(_scalar(P_value(params, G)), dG)


def P_increment(params: MaterialParams, G: np.ndarray, dG: np.ndarray) -> np.ndarray:
    b = np.sum(G * G, axis=(-1, -2, -3))
    delta = np.sum(dG * (2.0 * G + dG), axis=(-1, -2, -3))
    return params.kappa_P / params.p * tensor.pow_increment(b, delta, params.p / 2.0)


def R_value(params: MaterialParams, F: np.ndarray, Fdot: np.ndarray) -> np.ndarray:
    M = params.A @ tensor.cauchy_green_rate(F, Fdot)
    nrm2 = np.sum(M * M, axis=(-1, -2))
    return nrm2 ** (params.p_tilde / 2.0) / params.p_tilde


def R_eval(params: MaterialParams, F: np.ndarray, Fdot: np.ndarray) -> DensityEval:
    F = np.asarray(F, dtype=float)
    Fdot = np.asarray(Fdot, dtype=float)
    Cdot = tensor.cauchy_green_rate(F, Fdot)
    nrm = np.sqrt(np.sum((params.A @ Cdot) ** 2, axis=(-1, -2)))
    pos = nrm > 0
    # zero-rate limit of |A Cdot|^{p~-2} (...) is 0 for every p~ > 1
    weight = np.where(pos, np.where(pos, nrm, 1.0) ** (params.p_tilde - 2.0), 0.0)
    AtA = params.AtA
    deriv = weight[..., None, None] * (F @ Cdot @ AtA + F @ AtA @ Cdot)
    value = nrm ** params.p_tilde / params.p_tilde
    return DensityEval(_scalar(value), deriv)


def D_pointwise(params: MaterialParams, F1: np.ndarray, F2: np.ndarray):
    M = params.A @ (tensor.cauchy_green(np.asarray(F1, float)) - tensor.cauchy_green(np.asarray(F2, float)))
    return _scalar(np.sqrt(np.sum(M * M, axis=(-1, -2))))


def growth_floor_constants(params: MaterialParams, smin: float = 1e-2, smax: float = 1e2,
                           det_range=(0.1, 10.0), points: int = 801) -> tuple[float, float]:
    """A pair (c, C) with W(F) >= c (|F|^2 + det(F)^-q) - C on the given determinant range.

    W, |F| and det F depend on F only through its singular values, so a dense grid
    over singular values is an exhaustive search of the matrix set.  The slope
    ``c`` is fixed at half the smaller coefficient; ``C`` is the sampled supremum
    of the deficit plus a 1% margin.
    """
    c = 0.5 * min(params.alpha_W, params.beta_W)
    q = params.q
    lo, hi = det_range
    grid = np.geomspace(smin, smax, points)
    if params.d == 1:
        s = grid[(grid >= lo) & (grid <= hi)]
        F2, dets = s**2, s
        W = params.alpha_W * (s**2 - 1.0) ** 2 + params.beta_W * barrier(params, s)
    else:
        s1, s2 = np.meshgrid(grid, grid, indexing="ij")
        dets = s1 * s2
        keep = (dets >= lo) & (dets <= hi)
        s1, s2, dets = s1[keep], s2[keep], dets[keep]
        F2 = s1**2 + s2**2
        W = params.alpha_W * ((s1**2 - 1.0) ** 2 + (s2**2 - 1.0) ** 2) + params.beta_W * barrier(params, dets)
    deficit = c * (F2 + dets ** (-q)) - W
    C = max(float(deficit.max()), 0.0)
    return c, 1.01 * C + 1e-12
