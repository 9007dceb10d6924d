"""Randomized checks of the static inequalities: rigidity, Korn, a-priori bounds, slope representation."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import field, tensor
from .decay import random_bubble_field
from .errors import PropertyViolation, ValidationError
from .field import AdmissibleSet, DeformationField, LoadField, lp_norm_cells


@dataclass(frozen=True)
class SampleSpec:
    seed: int = 0
    count: int = 100
    amplitude: float = 0.1
    degree: int = 2
    M: float = np.inf

    def __post_init__(self):
        if self.count < 1 or self.degree < 0:
            raise ValidationError("sample count must be positive and degree nonnegative")
        if not self.amplitude > 0:
            raise ValidationError("amplitude must be positive")


@dataclass
class SampleSet:
    fields: list
    seeds: list
    rejections: int


def sample_admissible(adm: AdmissibleSet, spec: SampleSpec, load: LoadField | None = None,
                      base: DeformationField | None = None, max_rejections: int = 10000) -> SampleSet:
    """Seeded perturbations ``base + a * bubble * poly`` with det > 0 and energy <= M.

    Sample ``i`` uses the generator seeded by ``(spec.seed, i)``; the amplitude
    ``a`` is drawn uniformly in ``[0.1, 1] * spec.amplitude`` (gradient sup-norm).
    """
    base = adm.yhat if base is None else base
    out, seeds, rejected = [], [], 0
    i = 0
    while len(out) < spec.count:
        rng = np.random.default_rng([spec.seed, i])
        amp = spec.amplitude * rng.uniform(0.1, 1.0)
        y = adm.project(base + amp * random_bubble_field(adm.grid, rng, spec.degree))
        i += 1
        if np.all(tensor.det(y.F) > 0) and field.energy(adm, load, y) <= spec.M:
            out.append(y)
            seeds.append(i - 1)
        else:
            rejected += 1
            if rejected > max_rejections:
                raise ValidationError("sampler rejected %d fields; lower the amplitude" % rejected)
    return SampleSet(out, seeds, rejected)


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return np.inf if num > 0 else 0.0


def rigidity_ratio(y0: DeformationField, y1: DeformationField, p_tilde: float = 2.0) -> float:
    """|grad y1 - grad y0|_{L^p} / |C1 - C0|_{L^p}; +inf when only the denominator vanishes."""
    grid = y0.grid
    num = lp_norm_cells(grid, y1.F - y0.F, p_tilde)
    den = lp_norm_cells(grid, tensor.cauchy_green(y1.F) - tensor.cauchy_green(y0.F), p_tilde)
    return _ratio(num, den)


def korn_ratio(y: DeformationField, u: np.ndarray, p_tilde: float = 2.0) -> float:
    """|grad u|_{L^p} / |grad u^T grad y + grad y^T grad u|_{L^p}."""
    grid = y.grid
    U = grid.cell_gradient(np.asarray(u, dtype=float))
    num = lp_norm_cells(grid, U, p_tilde)
    den = lp_norm_cells(grid, tensor.cauchy_green_rate(y.F, U), p_tilde)
    return _ratio(num, den)


def norm_equivalence_ratio(params, y0: DeformationField, y1: DeformationField) -> float:
    """D(y0, y1) / |grad y1 - grad y0|_{L^p_tilde}."""
    return _ratio(field.metric(params, y0, y1), lp_norm_cells(y0.grid, y1.F - y0.F, params.p_tilde))


def dump_counterexample(directory: str, name: str, y: DeformationField, params, extra: dict | None = None) -> str:
    """Write ``name.bin`` (field checkpoint) and ``name.json`` (parameters) and return the JSON path."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, name + ".bin"), "wb") as fh:
        fh.write(field.field_to_bytes(y, params.p_tilde))
    path = os.path.join(directory, name + ".json")
    with open(path, "w") as fh:
        json.dump({"params": params.to_dict(), **(extra or {})}, fh, sort_keys=True, indent=2)
    return path


def apriori_check(adm: AdmissibleSet, y: DeformationField, load: LoadField | None = None,
                  dump_dir: str | None = None) -> dict:
    """Norm surrogates of a state in the sublevel set; min det must be positive and all norms finite."""
    grid, p = adm.grid, adm.params.p
    F = y.F
    record = {
        "energy": field.energy(adm, load, y),
        "w2p_norm": (float(np.sum(grid.node_weights * np.sum(np.abs(y.y) ** 2, axis=1) ** (p / 2)))
                     + lp_norm_cells(grid, F, p) ** p + lp_norm_cells(grid, y.G, p) ** p) ** (1.0 / p),
        "grad_sup": float(np.max(np.sqrt(np.sum(F * F, axis=(1, 2))))),
        "min_det": float(np.min(tensor.det(F))),
    }
    ok = record["min_det"] > 0 and all(np.isfinite(v) for k, v in record.items() if k != "energy")
    if not ok:
        where = dump_counterexample(dump_dir, "apriori", y, adm.params, record) if dump_dir else None
        raise PropertyViolation("a-priori bounds violated: %r" % record, where)
    return record


def max_ratio_summary(values, seeds, buckets: int = 10) -> dict:
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    k = int(np.argmax(values))
    hist, edges = np.histogram(finite, bins=buckets) if len(finite) else (np.array([]), np.array([]))
    return {"max": float(values[k]), "argmax_seed": int(seeds[k]), "count": len(values),
            "finite": bool(np.all(np.isfinite(values))),
            "histogram": {"counts": hist.tolist(), "edges": edges.tolist()}}


def rigidity_study(adm: AdmissibleSet, spec: SampleSpec) -> dict:
    """Rigidity ratios for consecutive sample pairs (sample 2k against 2k+1)."""
    pt = adm.params.p_tilde
    sset = sample_admissible(adm, SampleSpec(spec.seed, 2 * spec.count, spec.amplitude, spec.degree, spec.M))
    ys = sset.fields
    vals = [rigidity_ratio(ys[2 * k], ys[2 * k + 1], pt) for k in range(spec.count)]
    out = max_ratio_summary(vals, sset.seeds[::2])
    out["rejections"] = sset.rejections
    out["running_max"] = np.maximum.accumulate(vals).tolist()[-1]
    return out


def korn_study(adm: AdmissibleSet, spec: SampleSpec) -> dict:
    """Korn ratios at the datum for seeded interior displacement fields."""
    pt = adm.params.p_tilde
    sset = sample_admissible(adm, spec)
    y = adm.yhat
    vals = [korn_ratio(y, s.y - y.y, pt) for s in sset.fields]
    out = max_ratio_summary(vals, sset.seeds)
    out["rejections"] = sset.rejections
    return out


def norm_equivalence_study(adm: AdmissibleSet, spec: SampleSpec) -> dict:
    sset = sample_admissible(adm, SampleSpec(spec.seed, 2 * spec.count, spec.amplitude, spec.degree, spec.M))
    ys = sset.fields
    vals = np.array([norm_equivalence_ratio(adm.params, ys[2 * k], ys[2 * k + 1]) for k in range(spec.count)])
    return {"c": float(vals.min()), "C": float(vals.max()), "count": spec.count}


def slope_representation_check(adm: AdmissibleSet, load: LoadField | None, y: DeformationField,
                               spec: SampleSpec, lam_hat: float, rigidity: float, slope=None,
                               form: str = "small", tol: float = 1e-6, dump_dir: str | None = None) -> dict:
    """Sampled difference quotients against the local slope.

    For ``count`` admissible ``w`` near ``y`` the ratio

        (phi(y) - phi(w) + lam_hat / 2 * penalty)^+ / (D(y, w) (1 + C x^(p-1) + C x)^(1/p))

    with ``x = |grad w - grad y|_inf`` must not exceed the slope by more than
    ``tol``.  ``C`` follows from the rigidity constant and the sample's largest
    ``x``; ``penalty`` is |grad w - grad y|_{L2}^2 (``form="small"``) or
    D(y, w)^p (``form="large"``).
    """
    from .decay import metric_convexity_constant
    from .slope import local_slope

    params, grid = adm.params, adm.grid
    pt = params.p_tilde
    if slope is None:
        slope = local_slope(adm, load, y).slope
    sset = sample_admissible(adm, spec, load, base=y)
    dys = [w.y - y.y for w in sset.fields]
    xs = [float(np.max(np.sqrt(np.sum(grid.cell_gradient(dy) ** 2, axis=(1, 2))))) for dy in dys]
    C = metric_convexity_constant(params, rigidity, max(xs))
    ratios = []
    for w, dy, x in zip(sset.fields, dys, xs):
        drop = -field.energy_increment(adm, load, y, dy)
        dist = field.metric(params, y, w)
        if form == "small":
            penalty = lp_norm_cells(grid, w.F - y.F, 2.0) ** 2
        elif form == "large":
            penalty = dist**pt
        else:
            raise ValidationError("form must be 'small' or 'large'")
        num = max(drop + 0.5 * lam_hat * penalty, 0.0)
        den = dist * (1.0 + C * x ** (pt - 1.0) + C * x) ** (1.0 / pt)
        ratios.append(_ratio(num, den))
    ratios = np.array(ratios)
    k = int(np.argmax(ratios))
    record = {"slope": float(slope), "max_ratio": float(ratios[k]), "argmax_seed": int(sset.seeds[k]),
              "count": len(ratios), "constant": C, "lam_hat": lam_hat, "form": form,
              "passed": bool(ratios[k] <= slope + tol)}
    if not record["passed"]:
        where = dump_counterexample(dump_dir, "slope_repr", sset.fields[k], params, record) if dump_dir else None
        raise PropertyViolation("sampled ratio %.6g exceeds slope %.6g" % (ratios[k], slope), where)
    return record


def symmetric_gradient_field(grid: field.Grid, psi: np.ndarray) -> np.ndarray:
    """Displacement whose discrete gradient is exactly symmetric.

    ``psi`` is a nodal scalar vanishing on the two outer node layers.  The
    displacement at node ``i`` is the discrete cell gradient of ``psi`` on cell
    ``i`` (the cell whose lowest corner is node ``i``); since the difference and
    averaging stencils commute, its cell gradient is the discrete Hessian of a
    potential and hence symmetric.
    """
    psi = np.asarray(psi, dtype=float)
    if np.any(psi[~grid.layer_mask(2)] != 0):
        raise ValidationError("potential must vanish on the two outer node layers")
    grads = grid.cell_gradient(psi[:, None] * np.ones((1, grid.d)))[:, 0, :]
    cell_shape = (grid.n - 1,) * grid.d
    u = np.zeros((grid.n,) * grid.d + (grid.d,))
    u[tuple(slice(0, grid.n - 1) for _ in range(grid.d))] = grads.reshape(cell_shape + (grid.d,))
    return u.reshape(grid.num_nodes, grid.d)
