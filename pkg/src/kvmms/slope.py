"""Local slope of the energy in the dissipation metric, via a dual velocity problem.

At a state ``y`` the slope is obtained from the minimizer ``wbar`` of

    J(w) = sum_cells vol R(F_y, grad w) - <energy_gradient(y), w>

over velocities vanishing on the boundary layer, as
``slope = (p_tilde * sum vol R(F_y, grad wbar))^(1 - 1/p_tilde)``.  The
gradient-flow velocity at ``y`` is ``-wbar``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field, tensor
from .densities import R_eval, R_value
from .field import AdmissibleSet, DeformationField, LoadField
from .mms import MinimizeResult, Trajectory, gradient_norm, inner_minimize

# cells with |Cdot| below this make the dual integrand degenerate for p_tilde < 2
DEGENERATE_RATE = 1e-10


@dataclass(frozen=True)
class SlopeResult:
    wbar: np.ndarray
    slope: float
    residual: float
    iterations: int = 0
    flag: str = ""

    @property
    def flagged(self) -> bool:
        return bool(self.flag)


class DualProblem:
    """The dual functional J on interior nodal velocities."""

    def __init__(self, adm: AdmissibleSet, load: LoadField | None, y: DeformationField):
        self.params, self.grid, self.y = adm.params, adm.grid, y
        self.g = field.energy_gradient(adm, load, y)[self.grid.interior_index].ravel()

    def full(self, w: np.ndarray) -> np.ndarray:
        out = np.zeros((self.grid.num_nodes, self.grid.d))
        out[self.grid.interior_index] = np.asarray(w).reshape(-1, self.grid.d)
        return out

    def rate(self, w: np.ndarray) -> np.ndarray:
        """Per-cell A Cdot for the velocity ``w`` (interior values)."""
        Cdot = tensor.cauchy_green_rate(self.y.F, self.grid.cell_gradient(self.full(w)))
        return self.params.A @ Cdot

    def dissipation(self, w: np.ndarray) -> float:
        """sum vol R(F_y, grad w)."""
        M = self.rate(w)
        pt = self.params.p_tilde
        return float(self.grid.vol * np.sum(np.sum(M * M, axis=(-1, -2)) ** (pt / 2.0)) / pt)

    def value(self, w) -> float:
        return self.dissipation(w) - float(np.dot(self.g, w))

    def gradient(self, w) -> np.ndarray:
        dR = R_eval(self.params, self.y.F, self.grid.cell_gradient(self.full(w))).deriv
        gw = self.grid.vol * self.grid.cell_gradient_adjoint(dR)
        return gw[self.grid.interior_index].ravel() - self.g

    def increment(self, w, s) -> float:
        M = self.rate(w)
        dM = self.rate(s)
        pt = self.params.p_tilde
        b = np.sum(M * M, axis=(-1, -2))
        delta = np.sum(dM * (2.0 * M + dM), axis=(-1, -2))
        dR = self.grid.vol * np.sum(tensor.pow_increment(b, delta, pt / 2.0)) / pt
        return float(dR - np.dot(self.g, s))

    def degenerate(self, w) -> bool:
        if self.params.p_tilde >= 2:
            return False
        Cdot = np.linalg.inv(self.params.A) @ self.rate(w)
        return bool(np.min(np.sqrt(np.sum(Cdot * Cdot, axis=(-1, -2)))) < DEGENERATE_RATE)

    def warm_start(self) -> np.ndarray:
        """Optimal multiple of the preconditioned gradient (J is p_tilde-homogeneous in w)."""
        v = self.grid.preconditioner(self.g).ravel()
        gv = float(np.dot(self.g, v))
        Rv = self.dissipation(v)
        if not (gv > 0 and Rv > 0):
            return np.zeros_like(self.g)
        pt = self.params.p_tilde
        return (gv / (pt * Rv)) ** (1.0 / (pt - 1.0)) * v

    def slope_from(self, w) -> float:
        pt = self.params.p_tilde
        return (pt * self.dissipation(w)) ** (1.0 - 1.0 / pt)


def local_slope(adm: AdmissibleSet, load: LoadField | None, y: DeformationField,
                tol: float = 1e-9, max_iters: int = 5000) -> SlopeResult:
    """Solve the dual problem at ``y``; cap or line-search exits are flagged, not raised."""
    prob = DualProblem(adm, load, y)
    grid = adm.grid
    w0 = prob.warm_start()
    if gradient_norm(grid, prob.g) == 0.0:
        return SlopeResult(prob.full(w0), 0.0, 0.0)
    res: MinimizeResult = inner_minimize(
        prob.value, prob.gradient, w0, tol=tol, max_iters=max_iters, increment=prob.increment,
        precondition=lambda g: grid.preconditioner(g).ravel(), norm=lambda g: gradient_norm(grid, g),
        degenerate=prob.degenerate,
    )
    return SlopeResult(prob.full(res.x), prob.slope_from(res.x), res.grad_norm, res.iterations, res.flag)


def slope_recompute(adm: AdmissibleSet, y: DeformationField, wbar: np.ndarray) -> float:
    """Slope value evaluated independently from a returned velocity field."""
    params, grid = adm.params, adm.grid
    total = grid.vol * float(np.sum(R_value(params, y.F, grid.cell_gradient(wbar))))
    return (params.p_tilde * total) ** (1.0 - 1.0 / params.p_tilde)


def euler_lagrange_residual(adm: AdmissibleSet, load: LoadField | None, y: DeformationField,
                            wbar: np.ndarray) -> float:
    """Scaled norm of the dual functional's gradient at ``wbar``."""
    prob = DualProblem(adm, load, y)
    w = wbar[adm.grid.interior_index].ravel()
    return gradient_norm(adm.grid, prob.gradient(w))


def metric_derivative(traj: Trajectory, n: int) -> float:
    """Backward difference quotient D(Y^n, Y^{n-1}) / tau."""
    if not 1 <= n < len(traj):
        raise IndexError("step index %d outside 1..%d" % (n, len(traj) - 1))
    return traj.records[n].dist / traj.tau
