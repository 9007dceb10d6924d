"""Trajectory diagnostics: energy-dissipation balance, dissipation identity, weak residual."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from . import field
from .densities import R_eval, R_value
from .errors import SolverError
from .field import AdmissibleSet, DeformationField, LoadField, fmt
from .mms import Trajectory
from .slope import local_slope


@dataclass
class EdbReport:
    """Energy-dissipation balance series; entry n refers to time t_n."""

    t: np.ndarray
    phi: np.ndarray
    metric_term: np.ndarray   # (1/p) sum_k (D_k / tau)^p tau, cumulative
    slope_term: np.ndarray    # (1/p') sum_k slope(Y^k)^p' tau, cumulative
    residual: np.ndarray
    dissipation_residual: float
    slopes: np.ndarray

    @property
    def final_residual(self) -> float:
        return float(self.residual[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "t", "phi", "metric_term", "slope_term", "slope", "edb_residual"])
        for n in range(len(self.t)):
            w.writerow([n, fmt(self.t[n]), fmt(self.phi[n]), fmt(self.metric_term[n]),
                        fmt(self.slope_term[n]), fmt(self.slopes[n]), fmt(self.residual[n])])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"final_residual": self.final_residual, "dissipation_identity_residual": self.dissipation_residual,
                "steps": len(self.t) - 1}


def _require_clean(traj: Trajectory):
    if traj.flagged_steps:
        raise SolverError("trajectory has flagged steps %s" % traj.flagged_steps[:5])


def slope_series(adm: AdmissibleSet, load: LoadField | None, traj: Trajectory, tol: float = 1e-10) -> np.ndarray:
    """Local slope at every Y^n (entry 0 is at the initial state)."""
    out = np.empty(len(traj))
    for n, y in enumerate(traj.fields):
        res = local_slope(adm, load, y, tol=tol)
        if res.flagged:
            raise SolverError("slope solve flagged (%s) at step %d" % (res.flag, n))
        out[n] = res.slope
    return out


def edb_report(adm: AdmissibleSet, load: LoadField | None, traj: Trajectory,
               slopes: np.ndarray | None = None, slope_tol: float = 1e-10) -> EdbReport:
    """Right-endpoint quadrature of the energy-dissipation balance."""
    _require_clean(traj)
    pt = adm.params.p_tilde
    pc = pt / (pt - 1.0)
    tau = traj.tau
    if slopes is None:
        slopes = slope_series(adm, load, traj, slope_tol)
    phi = traj.energies
    speed = traj.increments / tau
    metric_term = np.concatenate([[0.0], np.cumsum(speed[1:] ** pt * tau)]) / pt
    slope_term = np.concatenate([[0.0], np.cumsum(slopes[1:] ** pc * tau)]) / pc
    residual = metric_term + slope_term + phi - phi[0]
    return EdbReport(traj.times, phi, metric_term, slope_term, residual,
                     dissipation_identity_residual(adm, load, traj), np.asarray(slopes))


def cumulative_dissipation(adm: AdmissibleSet, traj: Trajectory) -> np.ndarray:
    """sum_k tau sum_cells vol R(F(Y^k), (F(Y^k) - F(Y^{k-1})) / tau), cumulative in n."""
    vals = [0.0]
    grid, tau = adm.grid, traj.tau
    for n in range(1, len(traj)):
        F1, F0 = traj.fields[n].F, traj.fields[n - 1].F
        vals.append(tau * grid.vol * float(np.sum(R_value(adm.params, F1, (F1 - F0) / tau))))
    return np.cumsum(vals)


def dissipation_identity_residual(adm: AdmissibleSet, load: LoadField | None, traj: Trajectory) -> float:
    """p_tilde * (discrete viscous dissipation) - (phi(Y^0) - phi(Y^N)); raw, sign kept."""
    _require_clean(traj)
    diss = cumulative_dissipation(adm, traj)
    E = traj.energies
    return float(adm.params.p_tilde * diss[-1] - (E[0] - E[-1]))


# weak residual ----------------------------------------------------------------------------------

def bump_basis(grid: field.Grid, per_axis: int = 3, radius: int = 2) -> list[np.ndarray]:
    """Tensor-product hat fields at a fixed coarse set of nodes, vanishing on the two outer layers.

    Each returned array has shape (num_nodes, d) and is unit-normalized in the
    discrete W^{2,p} norm with p = 2 * d (a fixed, mesh-consistent choice).
    """
    lo, hi = radius + 1, grid.n - 2 - radius
    if lo > hi:
        return []
    centers_1d = np.unique(np.linspace(lo, hi, per_axis).round().astype(int))
    idx = grid.node_index
    out = []
    for c in np.array(np.meshgrid(*([centers_1d] * grid.d), indexing="ij")).reshape(grid.d, -1).T:
        psi = np.prod(np.clip(1.0 - np.abs(idx - c) / radius, 0.0, None), axis=1)
        for comp in range(grid.d):
            v = np.zeros((grid.num_nodes, grid.d))
            v[:, comp] = psi
            out.append(v / w2p_norm(grid, v, 2.0 * grid.d))
    return out


def w2p_norm(grid: field.Grid, v: np.ndarray, p: float) -> float:
    """Discrete W^{2,p} norm: trapezoidal nodal values plus cell gradients and Hessians."""
    nodal = float(np.sum(grid.node_weights * np.sum(np.abs(v) ** 2, axis=1) ** (p / 2.0)))
    F = field.lp_norm_cells(grid, grid.cell_gradient(v), p) ** p
    G = field.lp_norm_cells(grid, grid.cell_hessian(v), p) ** p
    return (nodal + F + G) ** (1.0 / p)


def weak_residual(adm: AdmissibleSet, load: LoadField | None, y: DeformationField,
                  ydot: np.ndarray | None = None, basis: list[np.ndarray] | None = None) -> float:
    """Max over the bump basis of the weak-form defect of elastic plus viscous stresses."""
    grid = adm.grid
    g = field.energy_gradient(adm, load, y)
    if ydot is not None:
        dR = R_eval(adm.params, y.F, grid.cell_gradient(np.asarray(ydot, dtype=float))).deriv
        g = g + grid.vol * grid.cell_gradient_adjoint(dR)
    if basis is None:
        basis = bump_basis(grid)
    if not basis:
        return 0.0
    return float(max(abs(np.sum(g * b)) for b in basis))


def write_edb(report: EdbReport) -> tuple[str, str]:
    return report.to_csv(), json.dumps(report.summary(), sort_keys=True, indent=2)
