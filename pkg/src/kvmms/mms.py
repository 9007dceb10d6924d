"""Minimizing-movement time stepping.

Each step minimizes, over fields with the clamped boundary datum,

    Phi(v) = D(v, u)^p_tilde / (p_tilde tau^(p_tilde - 1)) + energy(v)

starting from the previous state ``u``.  The optimizer is a preconditioned
L-BFGS with Armijo backtracking that only ever accepts feasible iterates
(the determinant barrier returns +inf, which the line search rejects).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from . import field
from .errors import InfeasibleStateError, SolverError, ValidationError
from .field import AdmissibleSet, DeformationField, LoadField, fmt

FLAG_OK = ""
FLAG_MAX_ITERS = "max_iters"
FLAG_LINE_SEARCH = "line_search"


@dataclass(frozen=True)
class MmsConfig:
    tau: float = 0.02
    T: float = 1.0
    inner_tol: float = 1e-9
    inner_max_iters: int = 2000
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    memory: int = 10
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError("tau must be positive")
        if not self.T >= self.tau * (1 - 1e-12):
            raise ValidationError("T must be at least tau")
        if not (self.inner_tol > 0 and self.inner_max_iters > 0):
            raise ValidationError("tolerances and iteration caps must be positive")
        if not (0 < self.armijo_c < 1 and 0 < self.armijo_shrink < 1):
            raise ValidationError("Armijo constants must lie in (0, 1)")
        if self.memory < 1:
            raise ValidationError("memory must be at least 1")

    @property
    def num_steps(self) -> int:
        return int(math.ceil(self.T / self.tau - 1e-9))


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    flag: str = FLAG_OK

    @property
    def flagged(self) -> bool:
        return bool(self.flag)


def inner_minimize(objective: Callable, gradient: Callable, x_start: np.ndarray, *,
                   tol: float = 1e-9, max_iters: int = 2000, armijo_c: float = 1e-4,
                   armijo_shrink: float = 0.5, memory: int = 10,
                   increment: Callable | None = None, precondition: Callable | None = None,
                   norm: Callable | None = None, degenerate: Callable | None = None,
                   min_step: float = 1e-20) -> MinimizeResult:
    """Minimize a smooth objective with a feasibility barrier (value +inf outside).

    Optional hooks: ``increment(x, s)`` returns objective(x + s) - objective(x)
    accurately (used for the Armijo test), ``precondition(g)`` applies a fixed
    symmetric positive definite approximate inverse Hessian, ``norm(g)`` is the
    stopping norm, and ``degenerate(x)`` signals that curvature pairs must not
    be stored at ``x``.  Every accepted iterate strictly decreases the
    objective; on failure the best iterate is returned with a flag.
    """
    x = np.array(x_start, dtype=float)
    fx = objective(x)
    if not np.isfinite(fx):
        raise InfeasibleStateError("starting point is infeasible")
    prec = precondition or (lambda g: g)
    nrm = norm or (lambda g: float(np.linalg.norm(g)))
    inc = increment or (lambda x_, s: objective(x_ + s) - objective(x_))
    g = gradient(x)
    S, Y, rho = [], [], []
    gamma = 1.0
    it = 0
    while True:
        gn = nrm(g)
        if gn <= tol:
            return MinimizeResult(x, fx, gn, it)
        if it >= max_iters:
            return MinimizeResult(x, fx, gn, it, FLAG_MAX_ITERS)
        # two-loop recursion with H0 = gamma * prec
        qv = g.copy()
        alphas = []
        for s_, y_, r_ in zip(reversed(S), reversed(Y), reversed(rho)):
            a = r_ * np.dot(s_, qv)
            alphas.append(a)
            qv -= a * y_
        r = gamma * prec(qv)
        for (s_, y_, r_), a in zip(zip(S, Y, rho), reversed(alphas)):
            b = r_ * np.dot(y_, r)
            r += (a - b) * s_
        d = -r
        slope = float(np.dot(g, d))
        if not slope < 0:
            S.clear(); Y.clear(); rho.clear()
            d = -gamma * prec(g)
            slope = float(np.dot(g, d))
            if not slope < 0:
                return MinimizeResult(x, fx, gn, it, FLAG_LINE_SEARCH)
        step = 1.0
        accepted = False
        restarted = False
        while True:
            s = step * d
            df = inc(x, s)
            if np.isfinite(df) and df <= armijo_c * step * slope and df < 0:
                accepted = True
                break
            step *= armijo_shrink
            if step * np.max(np.abs(d)) < min_step * max(1.0, np.max(np.abs(x))):
                if S and not restarted:
                    # retry once along the preconditioned steepest direction
                    S.clear(); Y.clear(); rho.clear()
                    d = -gamma * prec(g)
                    slope = float(np.dot(g, d))
                    step = 1.0
                    restarted = True
                    continue
                break
        if not accepted:
            return MinimizeResult(x, fx, gn, it, FLAG_LINE_SEARCH)
        x_new = x + s
        g_new = gradient(x_new)
        fx = fx + df
        yv = g_new - g
        sy = float(np.dot(s, yv))
        it += 1
        skip = degenerate is not None and degenerate(x_new)
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(yv) and not skip:
            S.append(s); Y.append(yv); rho.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0); Y.pop(0); rho.pop(0)
            py = prec(yv)
            gamma = sy / float(np.dot(yv, py))
        x, g = x_new, g_new


# step problem -------------------------------------------------------------------------------

class StepProblem:
    """Phi as a function of the interior displacement from ``y_prev``.

    Working with the displacement keeps the metric term exact to roundoff of
    the (small) increment rather than of the nodal positions, which matters
    because the metric Hessian grows like 1/tau.
    """

    def __init__(self, adm: AdmissibleSet, load: LoadField | None, tau: float | None, y_prev: DeformationField):
        # tau=None drops the metric term: plain energy minimization with y_prev as datum and start
        self.adm, self.load, self.tau, self.y_prev = adm, load, tau, y_prev
        pt = adm.params.p_tilde
        self.scale = 0.0 if tau is None else 1.0 / (pt * tau ** (pt - 1.0))
        self.grid = adm.grid
        self._cache_x = None
        self._cache_y = None

    @property
    def start(self) -> np.ndarray:
        return np.zeros(self.grid.interior_index.size * self.grid.d)

    def displacement(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros((self.grid.num_nodes, self.grid.d))
        out[self.grid.interior_index] = np.reshape(x, (-1, self.grid.d))
        return out

    def field(self, x: np.ndarray) -> DeformationField:
        if self._cache_x is None or not np.array_equal(x, self._cache_x):
            self._cache_x = np.array(x)
            self._cache_y = DeformationField(self.grid, self.y_prev.y + self.displacement(x))
        return self._cache_y

    def value(self, x) -> float:
        y = self.field(x)
        e = field.energy(self.adm, self.load, y)
        if not np.isfinite(e):
            return np.inf
        if not self.scale:
            return e
        return self.scale * field.metric_pow_disp(self.adm.params, self.y_prev, self.displacement(x)) + e

    def gradient(self, x) -> np.ndarray:
        y = self.field(x)
        g = field.energy_gradient(self.adm, self.load, y)
        if self.scale:
            g += self.scale * field.metric_gradient_disp(self.adm.params, self.y_prev, self.displacement(x))
        return g[self.grid.interior_index].ravel()

    def increment(self, x, s) -> float:
        y = self.field(x)
        ds = self.displacement(s)
        de = field.energy_increment(self.adm, self.load, y, ds)
        if not np.isfinite(de) or not self.scale:
            return de
        return de + self.scale * field.metric_pow_increment_disp(self.adm.params, self.y_prev,
                                                                 self.displacement(x), ds)

    def precondition(self, g) -> np.ndarray:
        return self.grid.preconditioner(g).ravel()

    def norm(self, g) -> float:
        return gradient_norm(self.grid, g)


def gradient_norm(grid: field.Grid, g: np.ndarray) -> float:
    """Euclidean norm of a nodal gradient scaled to be mesh-independent (per unit volume)."""
    return float(np.linalg.norm(g) / math.sqrt(grid.vol))


@dataclass
class StepRecord:
    n: int
    t: float
    phi: float
    dist: float
    iterations: int
    flag: str = FLAG_OK
    grad_norm: float = 0.0


def step(adm: AdmissibleSet, load: LoadField | None, cfg: MmsConfig, y_prev: DeformationField,
         return_record: bool = False):
    """One minimizing-movement step from ``y_prev``.

    The result never has a larger step objective than staying put; if the
    optimizer's gain is below roundoff of a direct evaluation, ``y_prev`` is kept.
    """
    phi_prev = field.energy(adm, load, y_prev)
    if not np.isfinite(phi_prev):
        raise InfeasibleStateError("previous state is infeasible")
    prob = StepProblem(adm, load, cfg.tau, y_prev)
    res = inner_minimize(
        prob.value, prob.gradient, prob.start, tol=cfg.inner_tol,
        max_iters=cfg.inner_max_iters, armijo_c=cfg.armijo_c, armijo_shrink=cfg.armijo_shrink,
        memory=cfg.memory, increment=prob.increment, precondition=prob.precondition, norm=prob.norm,
    )
    y_next = prob.field(res.x)
    phi_next = field.energy(adm, load, y_next)
    dist_pow = field.metric_pow_disp(adm.params, y_prev, prob.displacement(res.x))
    if not phi_next + prob.scale * dist_pow <= phi_prev:
        y_next, phi_next, dist_pow = y_prev, phi_prev, 0.0
    if not return_record:
        return y_next
    rec = StepRecord(0, 0.0, phi_next, dist_pow ** (1.0 / adm.params.p_tilde), res.iterations, res.flag, res.grad_norm)
    return y_next, rec


@dataclass
class Trajectory:
    tau: float
    p_tilde: float
    fields: list = dc_field(default_factory=list)
    records: list = dc_field(default_factory=list)

    def __len__(self):
        return len(self.fields)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.phi for r in self.records])

    @property
    def increments(self) -> np.ndarray:
        return np.array([r.dist for r in self.records])

    @property
    def flagged_steps(self) -> list[int]:
        return [r.n for r in self.records if r.flag]

    def at_time(self, t: float) -> DeformationField:
        """Piecewise-constant interpolant: Y^n on (t_{n-1}, t_n]."""
        n = int(math.ceil(t / self.tau - 1e-9))
        return self.fields[min(max(n, 0), len(self.fields) - 1)]

    def descent_margins(self) -> np.ndarray:
        """phi(Y^{n-1}) - phi(Y^n) - D(Y^n, Y^{n-1})^p_tilde / (p_tilde tau^(p_tilde-1)) for n >= 1."""
        pt = self.p_tilde
        E, Dn = self.energies, self.increments
        return E[:-1] - E[1:] - Dn[1:] ** pt / (pt * self.tau ** (pt - 1.0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "t", "phi", "dist_increment", "inner_iterations", "flag"])
        for r in self.records:
            w.writerow([r.n, fmt(r.t), fmt(r.phi), fmt(r.dist), r.iterations, r.flag])
        return buf.getvalue()


def run(adm: AdmissibleSet, load: LoadField | None, cfg: MmsConfig, y0: DeformationField,
        on_step: Callable | None = None, on_checkpoint: Callable | None = None) -> Trajectory:
    """Iterate :func:`step` for ceil(T / tau) steps from ``y0``.

    ``on_step(n, y, record)`` runs after every step; ``on_checkpoint(n, y)`` every
    ``cfg.checkpoint_every`` steps.  Exceeding the energy ceiling aborts the run.
    """
    y0 = adm.project(y0)
    phi0 = field.energy(adm, load, y0)
    if not np.isfinite(phi0):
        raise InfeasibleStateError("initial state is infeasible")
    traj = Trajectory(cfg.tau, adm.params.p_tilde)
    traj.fields.append(y0)
    traj.records.append(StepRecord(0, 0.0, phi0, 0.0, 0))
    y = y0
    for n in range(1, cfg.num_steps + 1):
        y, rec = step(adm, load, cfg, y, return_record=True)
        rec.n, rec.t = n, n * cfg.tau
        if rec.phi > adm.M:
            raise SolverError("energy %.3g exceeded the ceiling %.3g at step %d" % (rec.phi, adm.M, n))
        traj.fields.append(y)
        traj.records.append(rec)
        if on_step is not None:
            on_step(n, y, rec)
        if on_checkpoint is not None and cfg.checkpoint_every and n % cfg.checkpoint_every == 0:
            on_checkpoint(n, y)
    return traj
