"""Small dense tensor algebra for d x d matrices and d x d x d tensors.

Every routine accepts a single matrix or a stack of them (leading batch axes),
so the same code serves pointwise checks and per-cell assembly.  Third-order
tensors use the convention ``G[..., i, j, k] = d^2 y_i / dx_j dx_k``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import SingularMatrixError

# |det| below this is treated as singular by inv()
SINGULAR_THRESHOLD = 1e-14


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def skew(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M - np.swapaxes(M, -1, -2))


def cauchy_green(F: np.ndarray) -> np.ndarray:
    """Right Cauchy-Green tensor F^T F."""
    return np.swapaxes(F, -1, -2) @ F


def cauchy_green_rate(F: np.ndarray, Fdot: np.ndarray) -> np.ndarray:
    """Rate Fdot^T F + F^T Fdot of the Cauchy-Green tensor."""
    X = np.swapaxes(Fdot, -1, -2) @ F
    return X + np.swapaxes(X, -1, -2)


def frobenius(M: np.ndarray) -> np.ndarray | float:
    """Frobenius norm over the trailing matrix (2 axes) or tensor (3 axes) indices.

    A bare 2-d array is a matrix and a bare 3-d array a third-order tensor; for
    stacked input use :func:`frobenius_batch` and state the number of axes.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim not in (2, 3):
        raise ValueError("frobenius expects a matrix or a third-order tensor")
    return float(np.sqrt(np.sum(M * M)))


def frobenius_batch(M: np.ndarray, tensor_axes: int) -> np.ndarray:
    axes = tuple(range(-tensor_axes, 0))
    return np.sqrt(np.sum(M * M, axis=axes))


def ddot(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Double contraction X : Y over the last two axes."""
    return np.einsum("...ij,...ij->...", X, Y)


def det(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    if d == 1:
        return M[..., 0, 0].copy()
    if d == 2:
        return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    return np.linalg.det(M)


def cofactor(M: np.ndarray) -> np.ndarray:
    """Cofactor matrix, i.e. the derivative of det at M (equals det(M) M^{-T})."""
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    if d == 1:
        return np.ones_like(M)
    if d == 2:
        C = np.empty_like(M)
        C[..., 0, 0] = M[..., 1, 1]
        C[..., 0, 1] = -M[..., 1, 0]
        C[..., 1, 0] = -M[..., 0, 1]
        C[..., 1, 1] = M[..., 0, 0]
        return C
    return det(M)[..., None, None] * np.swapaxes(np.linalg.inv(M), -1, -2)


def det_increment(F: np.ndarray, dF: np.ndarray) -> np.ndarray:
    """det(F + dF) - det(F) without cancellation against det(F)."""
    d = F.shape[-1]
    if d == 1:
        return dF[..., 0, 0].copy()
    if d == 2:
        return ddot(cofactor(F), dF) + det(dF)
    return det(F + dF) - det(F)


def inv(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    dets = det(M)
    if np.any(np.abs(dets) <= SINGULAR_THRESHOLD):
        raise SingularMatrixError("matrix is singular (|det| <= %g)" % SINGULAR_THRESHOLD)
    return np.swapaxes(cofactor(M), -1, -2) / dets[..., None, None]


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def random_rotation(seed=None, d: int = 2, angle: float | None = None) -> np.ndarray:
    """A rotation in SO(d) drawn from ``seed`` (an int or a numpy Generator).

    For d = 2 an explicit ``angle`` bypasses the random draw.
    """
    if d == 1:
        return np.ones((1, 1))
    if d == 2 and angle is not None:
        return rotation(angle)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if d == 2:
        return rotation(rng.uniform(-np.pi, np.pi))
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def pow_increment(b: np.ndarray, delta: np.ndarray, e: float) -> np.ndarray:
    """(b + delta)^e - b^e for b >= 0, evaluated without cancellation.

    ``delta`` is clipped at ``-b`` so that roundoff in a squared-norm increment
    cannot produce a negative base.
    """
    b = np.asarray(b, dtype=float)
    delta = np.maximum(np.asarray(delta, dtype=float), -b)
    out = np.empty(np.broadcast(b, delta).shape)
    pos = b > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pos, delta / np.where(pos, b, 1.0), 0.0)
        big = np.where(pos, np.power(np.where(pos, b, 1.0), e), 0.0)
        out = np.where(pos, big * np.expm1(e * np.log1p(ratio)), np.power(np.maximum(delta, 0.0), e))
    return out


def _power_ratio(t: float, p_tilde: float) -> float:
    # (1 - t^p - (1-t)^p) / (t^{p-1}(1-t) + (1-t)^{p-1} t): the constant needed at a/(a+b) = t
    u = 1.0 - t
    num = 1.0 - t**p_tilde - u**p_tilde
    den = t ** (p_tilde - 1.0) * u + u ** (p_tilde - 1.0) * t
    return num / den if den > 0 else 0.0


@lru_cache(maxsize=None)
def power_inequality_constant(p_tilde: float) -> float:
    """Smallest C with (a+b)^p <= a^p + b^p + C (a^{p-1} b + b^{p-1} a) for a, b >= 0.

    The inequality is homogeneous, so C is the maximum of a scalar ratio over
    t = a/(a+b) in (0, 1); the ratio is symmetric in t <-> 1 - t.
    """
    if p_tilde <= 1.0:
        raise ValueError("p_tilde must exceed 1")
    res = minimize_scalar(
        lambda t: -_power_ratio(t, p_tilde), bounds=(1e-9, 0.5), method="bounded",
        options={"xatol": 1e-12},
    )
    return max(-float(res.fun), _power_ratio(0.5, p_tilde))
