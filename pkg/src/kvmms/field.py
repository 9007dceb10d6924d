"""Nodal deformation fields on a uniform grid over the unit box and the assembled functionals.

Nodes are stored flat in C order (axis 0 slowest), so a field is an array of
shape ``(n**d, d)``.  Cells are the ``(n-1)**d`` boxes between nodes.  Per-cell
gradients and Hessians come from tensor products of three 1-d stencils

* ``dif``: forward difference across the cell,
* ``avg``: mean of the two cell-corner values,
* ``sec``: second difference averaged over the two cell nodes (interior
  cells) or taken at the single adjacent interior node (boundary cells),

all exact on quadratics.  Operators are sparse and cached per grid; discrete
first variations are their transposes applied to the pointwise derivatives.
"""
from __future__ import annotations

import csv
import json
import io
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import densities, tensor
from .densities import MaterialParams
from .errors import GridMismatchError, InfeasibleStateError, ValidationError


def _dif_1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr") / h


def _avg_1d(n: int) -> sp.csr_matrix:
    return sp.diags([np.full(n - 1, 0.5), np.full(n - 1, 0.5)], [0, 1], shape=(n - 1, n), format="csr")


def _sec_1d(n: int, h: float) -> sp.csr_matrix:
    S = sp.lil_matrix((n - 1, n))
    S[0, 0:3] = [1.0, -2.0, 1.0]
    S[n - 2, n - 3:n] = [1.0, -2.0, 1.0]
    for c in range(1, n - 2):
        S[c, c - 1:c + 3] = [0.5, -0.5, -0.5, 0.5]
    return S.tocsr() / h**2


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


class Grid:
    """Uniform tensor grid with ``n`` nodes per axis on (0, 1)^d."""

    def __init__(self, d: int, n: int):
        if d not in (1, 2):
            raise ValidationError("grid dimension must be 1 or 2")
        if n < 5:
            raise ValidationError("need at least 5 nodes per axis, got %d" % n)
        self.d = int(d)
        self.n = int(n)
        self.h = 1.0 / (n - 1)

    def __eq__(self, other):
        return isinstance(other, Grid) and (self.d, self.n) == (other.d, other.n)

    def __hash__(self):
        return hash((self.d, self.n))

    def __repr__(self):
        return "Grid(d=%d, n=%d)" % (self.d, self.n)

    @property
    def num_nodes(self) -> int:
        return self.n**self.d

    @property
    def num_cells(self) -> int:
        return (self.n - 1) ** self.d

    @property
    def vol(self) -> float:
        """Cell volume (midpoint quadrature weight)."""
        return self.h**self.d

    @cached_property
    def coords(self) -> np.ndarray:
        axes = [np.linspace(0.0, 1.0, self.n)] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        c = (np.arange(self.n - 1) + 0.5) * self.h
        mesh = np.meshgrid(*([c] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def node_index(self) -> np.ndarray:
        """Integer multi-index of each node, shape (num_nodes, d)."""
        mesh = np.meshgrid(*([np.arange(self.n)] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def layer_mask(self, depth: int) -> np.ndarray:
        """Nodes at least ``depth`` layers away from the boundary."""
        idx = self.node_index
        return np.all((idx >= depth) & (idx <= self.n - 1 - depth), axis=1)

    @cached_property
    def interior(self) -> np.ndarray:
        return self.layer_mask(1)

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.interior)

    @cached_property
    def node_weights(self) -> np.ndarray:
        w1 = np.full(self.n, self.h)
        w1[[0, -1]] *= 0.5
        w = w1
        for _ in range(self.d - 1):
            w = np.kron(w, w1)
        return w

    @cached_property
    def grad_ops(self) -> list[sp.csr_matrix]:
        """grad_ops[k] maps nodal scalars to per-cell derivatives along axis k."""
        dif, avg = _dif_1d(self.n, self.h), _avg_1d(self.n)
        return [_kron_all([dif if a == k else avg for a in range(self.d)]) for k in range(self.d)]

    @cached_property
    def hess_ops(self) -> dict[tuple[int, int], sp.csr_matrix]:
        """hess_ops[j, k] maps nodal scalars to per-cell second derivatives (j <= k)."""
        dif, avg, sec = _dif_1d(self.n, self.h), _avg_1d(self.n), _sec_1d(self.n, self.h)
        ops = {}
        for j in range(self.d):
            for k in range(j, self.d):
                factors = []
                for a in range(self.d):
                    if j == k:
                        factors.append(sec if a == j else avg)
                    else:
                        factors.append(dif if a in (j, k) else avg)
                ops[j, k] = _kron_all(factors)
        return ops

    @cached_property
    def grad_stack(self) -> sp.csr_matrix:
        return sp.vstack(self.grad_ops, format="csr")

    @cached_property
    def hess_stack(self) -> sp.csr_matrix:
        d = self.d
        return sp.vstack([self.hess_ops[min(j, k), max(j, k)] for j in range(d) for k in range(d)], format="csr")

    @cached_property
    def stiffness(self) -> sp.csc_matrix:
        """Sum of grad_ops[k]^T grad_ops[k] on interior nodes (a discrete Laplacian)."""
        B = self.grad_stack[:, self.interior_index]
        return sp.csc_matrix(B.T @ B)

    @cached_property
    def stiffness_lu(self):
        return splu(self.stiffness)

    # per-cell evaluation on nodal arrays ------------------------------------------------

    def cell_gradient(self, y: np.ndarray) -> np.ndarray:
        """(num_nodes, d) nodal values -> (num_cells, d, d) with [c, i, k] = d y_i / d x_k."""
        out = self.grad_stack @ y
        return out.reshape(self.d, self.num_cells, self.d).transpose(1, 2, 0)

    def cell_gradient_adjoint(self, S: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`cell_gradient`: sum_c S[c]:dF[c] = <adjoint(S), dy>."""
        flat = S.transpose(2, 0, 1).reshape(self.d * self.num_cells, self.d)
        return self.grad_stack.T @ flat

    def cell_hessian(self, y: np.ndarray) -> np.ndarray:
        """(num_nodes, d) -> (num_cells, d, d, d) with [c, i, j, k] = d^2 y_i / dx_j dx_k."""
        d = self.d
        out = self.hess_stack @ y
        return out.reshape(d, d, self.num_cells, d).transpose(2, 3, 0, 1)

    def cell_hessian_adjoint(self, T: np.ndarray) -> np.ndarray:
        d = self.d
        flat = T.transpose(2, 3, 0, 1).reshape(d * d * self.num_cells, d)
        return self.hess_stack.T @ flat

    def preconditioner(self, g_int: np.ndarray) -> np.ndarray:
        """Apply the inverse interior stiffness to each component of an interior gradient."""
        return self.stiffness_lu.solve(np.ascontiguousarray(g_int.reshape(-1, self.d)))


class DeformationField:
    """Nodal deformation on a grid.  Treat instances as immutable."""

    __slots__ = ("grid", "y", "_F", "_G")

    def __init__(self, grid: Grid, y: np.ndarray):
        y = np.array(y, dtype=float)
        if y.shape != (grid.num_nodes, grid.d):
            raise GridMismatchError("field shape %r does not fit %r" % (y.shape, grid))
        if not np.all(np.isfinite(y)):
            raise ValidationError("field has non-finite entries")
        self.grid = grid
        self.y = y
        self.y.flags.writeable = False
        self._F = None
        self._G = None

    @classmethod
    def identity(cls, grid: Grid) -> "DeformationField":
        return cls(grid, grid.coords.copy())

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "DeformationField":
        """Build from ``fn(coords) -> (num_nodes, d)``."""
        return cls(grid, np.asarray(fn(grid.coords), dtype=float).reshape(grid.num_nodes, grid.d))

    @property
    def F(self) -> np.ndarray:
        if self._F is None:
            self._F = self.grid.cell_gradient(self.y)
        return self._F

    @property
    def G(self) -> np.ndarray:
        if self._G is None:
            self._G = self.grid.cell_hessian(self.y)
        return self._G

    def interior_values(self) -> np.ndarray:
        return self.y[self.grid.interior_index].ravel()

    def with_interior(self, x: np.ndarray) -> "DeformationField":
        y = self.y.copy()
        y[self.grid.interior_index] = np.asarray(x).reshape(-1, self.grid.d)
        return DeformationField(self.grid, y)

    def __add__(self, other):
        other = other.y if isinstance(other, DeformationField) else other
        return DeformationField(self.grid, self.y + other)

    def __sub__(self, other):
        other = other.y if isinstance(other, DeformationField) else other
        return DeformationField(self.grid, self.y - other)

    def rotated(self, Q: np.ndarray) -> "DeformationField":
        """Left rotation of the deformed configuration, x -> Q y(x)."""
        return DeformationField(self.grid, self.y @ np.asarray(Q).T)

    def __repr__(self):
        return "DeformationField(%r)" % (self.grid,)


@dataclass(frozen=True)
class LoadField:
    grid: Grid
    f: np.ndarray

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if f.shape != (self.grid.num_nodes, self.grid.d):
            raise GridMismatchError("load shape does not fit grid")
        if not np.all(np.isfinite(f)):
            raise ValidationError("load has non-finite entries")
        object.__setattr__(self, "f", f)

    @classmethod
    def zero(cls, grid: Grid) -> "LoadField":
        return cls(grid, np.zeros((grid.num_nodes, grid.d)))

    def scaled(self, s: float) -> "LoadField":
        return LoadField(self.grid, s * self.f)


@dataclass(frozen=True, eq=False)
class AdmissibleSet:
    """Clamped-boundary state space: Dirichlet datum ``yhat`` and energy ceiling ``M``."""

    params: MaterialParams
    yhat: DeformationField
    M: float = 1e6

    def __post_init__(self):
        if not self.M > 0:
            raise ValidationError("energy ceiling must be positive")
        if self.yhat.grid.d != self.params.d:
            raise GridMismatchError("datum dimension differs from material dimension")
        if not np.isfinite(internal_energy(self.params, self.yhat)):
            raise ValidationError("boundary datum has infinite energy")

    @property
    def grid(self) -> Grid:
        return self.yhat.grid

    def project(self, y: DeformationField) -> DeformationField:
        """Overwrite the boundary layer with the datum."""
        out = self.yhat.y.copy()
        idx = self.grid.interior_index
        out[idx] = y.y[idx]
        return DeformationField(self.grid, out)

    def contains(self, y: DeformationField, load: "LoadField | None" = None) -> bool:
        bnd = ~self.grid.interior
        if not np.array_equal(y.y[bnd], self.yhat.y[bnd]):
            return False
        return bool(energy(self, load, y) <= self.M)


# functionals ------------------------------------------------------------------------------

def _check(grid: Grid, *fields):
    for f in fields:
        if f is not None and f.grid != grid:
            raise GridMismatchError("fields live on different grids")


def gradient_cells(y: DeformationField) -> np.ndarray:
    return y.F


def hessian_cells(y: DeformationField) -> np.ndarray:
    return y.G


def internal_energy(params: MaterialParams, y: DeformationField) -> float:
    """Integral of W + P (no load); +inf if some cell has det F <= 0."""
    Wv = densities.W_value(params, y.F)
    if not np.all(np.isfinite(Wv)):
        return np.inf
    return float(y.grid.vol * (Wv.sum() + densities.P_value(params, y.G).sum()))


def load_work(load: LoadField | None, y: DeformationField) -> float:
    if load is None:
        return 0.0
    return float(np.sum(y.grid.node_weights[:, None] * load.f * y.y))


def energy(adm: AdmissibleSet, load: LoadField | None, y: DeformationField) -> float:
    _check(adm.grid, load, y)
    e = internal_energy(adm.params, y)
    return e if not np.isfinite(e) else e - load_work(load, y)


def energy_gradient(adm: AdmissibleSet, load: LoadField | None, y: DeformationField) -> np.ndarray:
    """Gradient of the discrete energy in the nodal values; boundary rows are zero."""
    _check(adm.grid, load, y)
    grid, params = adm.grid, adm.params
    if np.any(tensor.det(y.F) <= 0):
        raise InfeasibleStateError("det grad y <= 0 on some cell")
    dW = densities.W_eval(params, y.F).deriv
    dP = densities.P_eval(params, y.G).deriv
    g = grid.vol * (grid.cell_gradient_adjoint(dW) + grid.cell_hessian_adjoint(dP))
    if load is not None:
        g -= grid.node_weights[:, None] * load.f
    g[~grid.interior] = 0.0
    return g


def energy_increment(adm: AdmissibleSet, load: LoadField | None, y: DeformationField,
                     dy: np.ndarray) -> float:
    """energy(y + dy) - energy(y) evaluated without cancellation against energy(y)."""
    grid, params = adm.grid, adm.params
    dF = grid.cell_gradient(dy)
    dG = grid.cell_hessian(dy)
    dW = densities.W_increment(params, y.F, dF)
    if not np.all(np.isfinite(dW)):
        return np.inf
    out = grid.vol * (dW.sum() + densities.P_increment(params, y.G, dG).sum())
    if load is not None:
        out -= float(np.sum(grid.node_weights[:, None] * load.f * dy))
    return float(out)


def _cg_difference(F1: np.ndarray, dF: np.ndarray) -> np.ndarray:
    """(F1 + dF)^T (F1 + dF) - F1^T F1 without forming either product."""
    X = np.swapaxes(dF, -1, -2) @ F1
    return X + np.swapaxes(X, -1, -2) + tensor.cauchy_green(dF)


def _metric_density(params: MaterialParams, y1: DeformationField, du: np.ndarray) -> np.ndarray:
    """A (C(y1) - C(y1 + du)) per cell, computed from the gradient of ``du``."""
    return -(params.A @ _cg_difference(y1.F, y1.grid.cell_gradient(du)))


def metric_pow_disp(params: MaterialParams, y1: DeformationField, du: np.ndarray) -> float:
    """D(y1, y1 + du)^p_tilde; accurate for small ``du`` since only its gradient enters."""
    M = _metric_density(params, y1, du)
    nrm2 = np.sum(M * M, axis=(-1, -2))
    return float(y1.grid.vol * np.sum(nrm2 ** (params.p_tilde / 2.0)))


def metric_gradient_disp(params: MaterialParams, y1: DeformationField, du: np.ndarray) -> np.ndarray:
    """Gradient of u -> D(y1, y1 + u)^p_tilde at u = du (boundary rows zero)."""
    grid, pt = y1.grid, params.p_tilde
    dF = grid.cell_gradient(du)
    dC = _cg_difference(y1.F, dF)
    X = params.A @ dC
    nrm = np.sqrt(np.sum(X * X, axis=(-1, -2)))
    pos = nrm > 0
    weight = np.where(pos, np.where(pos, nrm, 1.0) ** (pt - 2.0), 0.0)
    # d|A dC|^pt / dC = pt |X|^{pt-2} A^T X, then chain through C2 = F2^T F2
    N = params.AtA @ dC
    dF2 = pt * weight[:, None, None] * ((y1.F + dF) @ (N + np.swapaxes(N, -1, -2)))
    g = grid.vol * grid.cell_gradient_adjoint(dF2)
    g[~grid.interior] = 0.0
    return g


def metric_pow_increment_disp(params: MaterialParams, y1: DeformationField, du: np.ndarray,
                              ds: np.ndarray) -> float:
    """D(y1, y1 + du + ds)^p_tilde - D(y1, y1 + du)^p_tilde without cancellation."""
    grid = y1.grid
    dF = grid.cell_gradient(du)
    sF = grid.cell_gradient(ds)
    M = -(params.A @ _cg_difference(y1.F, dF))
    dM = -(params.A @ _cg_difference(y1.F + dF, sF))
    b = np.sum(M * M, axis=(-1, -2))
    delta = np.sum(dM * (2.0 * M + dM), axis=(-1, -2))
    return float(grid.vol * np.sum(tensor.pow_increment(b, delta, params.p_tilde / 2.0)))


def metric_pow(params: MaterialParams, y1: DeformationField, y2: DeformationField) -> float:
    """D(y1, y2)^p_tilde."""
    _check(y1.grid, y2)
    return metric_pow_disp(params, y1, y2.y - y1.y)


def metric(params: MaterialParams, y1: DeformationField, y2: DeformationField) -> float:
    return metric_pow(params, y1, y2) ** (1.0 / params.p_tilde)


def metric_gradient_second_arg(params: MaterialParams, y1: DeformationField,
                               y2: DeformationField) -> np.ndarray:
    """Gradient of v -> D(y1, v)^p_tilde at v = y2 (boundary rows zero)."""
    _check(y1.grid, y2)
    return metric_gradient_disp(params, y1, y2.y - y1.y)


def metric_pow_increment(params: MaterialParams, y1: DeformationField, y2: DeformationField,
                         dy: np.ndarray) -> float:
    """D(y1, y2 + dy)^p_tilde - D(y1, y2)^p_tilde without cancellation."""
    _check(y1.grid, y2)
    return metric_pow_increment_disp(params, y1, y2.y - y1.y, dy)


def lp_norm_cells(grid: Grid, X: np.ndarray, p: float) -> float:
    """Discrete L^p norm of a per-cell matrix or tensor field (midpoint rule)."""
    nrm = np.sqrt(np.sum(X.reshape(X.shape[0], -1) ** 2, axis=1))
    if np.isinf(p):
        return float(nrm.max())
    return float((grid.vol * np.sum(nrm**p)) ** (1.0 / p))


def rate_norm(params: MaterialParams, y: DeformationField, v: np.ndarray) -> float:
    """(sum vol |A Cdot|^p_tilde)^(1/p_tilde) for the nodal velocity ``v`` at ``y``."""
    grid = y.grid
    Cdot = tensor.cauchy_green_rate(y.F, grid.cell_gradient(v))
    M = params.A @ Cdot
    return float((grid.vol * np.sum(np.sum(M * M, axis=(-1, -2)) ** (params.p_tilde / 2.0))) ** (1.0 / params.p_tilde))


# serialization ----------------------------------------------------------------------------

FIELD_MAGIC = b"KVMF"
_HEADER = struct.Struct("<4sIIIdqd")  # magic, version, d, n, p_tilde, step, time
FIELD_VERSION = 1


def fmt(x: float) -> str:
    """Round-trip float formatting (17 significant digits)."""
    return "%.17g" % x


def field_to_csv(y: DeformationField) -> str:
    grid = y.grid
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node"] + ["x%d" % k for k in range(grid.d)] + ["y%d" % k for k in range(grid.d)])
    for i in range(grid.num_nodes):
        w.writerow([i] + [fmt(v) for v in grid.coords[i]] + [fmt(v) for v in y.y[i]])
    return buf.getvalue()


def field_from_csv(text: str) -> DeformationField:
    rows = list(csv.reader(io.StringIO(text)))
    d = (len(rows[0]) - 1) // 2
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    n = int(round(len(data) ** (1.0 / d)))
    return DeformationField(Grid(d, n), data[:, d:])


def field_to_bytes(y: DeformationField, p_tilde: float = float("nan"), step: int = -1,
                   time: float = float("nan")) -> bytes:
    grid = y.grid
    head = _HEADER.pack(FIELD_MAGIC, FIELD_VERSION, grid.d, grid.n, float(p_tilde), int(step), float(time))
    return head + np.ascontiguousarray(y.y, dtype="<f8").tobytes()


def field_from_bytes(data: bytes) -> tuple[DeformationField, dict]:
    if len(data) < _HEADER.size:
        raise ValidationError("truncated field checkpoint header")
    magic, version, d, n, pt, step, time = _HEADER.unpack_from(data)
    if magic != FIELD_MAGIC or version != FIELD_VERSION:
        raise ValidationError("not a field checkpoint (bad magic or version)")
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    grid = Grid(d, n)
    if payload.size != grid.num_nodes * d:
        raise ValidationError("truncated field checkpoint")
    meta = {"d": d, "n": n, "p_tilde": pt, "step": step, "time": time}
    return DeformationField(grid, payload.reshape(grid.num_nodes, d)), meta


@lru_cache(maxsize=None)
def grid_for(d: int, n: int) -> Grid:
    """Shared grid instance so operator caches are reused across fields."""
    return Grid(d, n)


def json_dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON (sorted keys) with every float written to 17 significant digits.

    Non-finite floats become the strings "inf", "-inf" and "nan".
    """
    def enc(o, level):
        pad, inner = " " * (indent * level), " " * (indent * (level + 1))
        if isinstance(o, (bool, np.bool_)) or o is None:
            return json.dumps(None if o is None else bool(o))
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            x = float(o)
            return fmt(x) if np.isfinite(x) else json.dumps(str(x))
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = ["%s%s: %s" % (inner, json.dumps(str(k)), enc(o[k], level + 1)) for k in sorted(o, key=str)]
            return "{\n" + ",\n".join(items) + "\n" + pad + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            seq = list(o)
            if not seq:
                return "[]"
            return "[" + ", ".join(enc(v, level + 1) for v in seq) + "]"
        raise TypeError("cannot serialize %r" % type(o))

    return enc(obj, 0) + "\n"
