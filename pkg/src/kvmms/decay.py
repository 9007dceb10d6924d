"""Small-strain scenarios and long-time decay analysis.

A scenario scales fixed polynomial data by ``delta``: boundary datum
``id + delta * uhat``, load ``delta * ftilde`` and initial state
``id + delta * u0``.  Decay of the energy gap to the unique equilibrium is
fitted as exponential, polynomial (``gap^(1-s)`` linear in t with
``s = p / (2p - 2)``) or detected as finite-time extinction, depending on the
viscosity exponent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
from scipy.stats import linregress

from . import calibrated, field, tensor
from .densities import MaterialParams
from .errors import FitWindowError, PropertyViolation, SolverError, ValidationError
from .field import AdmissibleSet, DeformationField, Grid, LoadField
from .mms import MmsConfig, StepProblem, Trajectory, inner_minimize, run

DEFAULT_FLOOR = 1e-10


# polynomial data ----------------------------------------------------------------------------------

def polynomial_field(grid: Grid, terms) -> np.ndarray:
    """Nodal vector field sum coeff * prod_k x_k^e_k per component.

    ``terms`` is a sequence of ``[component, coeff, e_0, ..., e_{d-1}]``.
    """
    out = np.zeros((grid.num_nodes, grid.d))
    X = grid.coords
    for term in terms:
        comp, coeff, exps = int(term[0]), float(term[1]), term[2:]
        if len(exps) != grid.d or not 0 <= comp < grid.d:
            raise ValidationError("polynomial term %r does not fit dimension %d" % (list(term), grid.d))
        out[:, comp] += coeff * np.prod(X ** np.asarray(exps, dtype=float), axis=1)
    return out


def bubble(grid: Grid) -> np.ndarray:
    """4^d prod_k x_k (1 - x_k): unit at the center, zero on the boundary."""
    X = grid.coords
    return np.prod(4.0 * X * (1.0 - X), axis=1)


def random_bubble_field(grid: Grid, rng: np.random.Generator, degree: int = 2) -> np.ndarray:
    """Bubble times a random polynomial of the given degree, scaled so max |grad| over cells is 1."""
    X = grid.coords
    exps = [e for e in np.ndindex(*([degree + 1] * grid.d)) if sum(e) <= degree]
    out = np.zeros((grid.num_nodes, grid.d))
    for comp in range(grid.d):
        coeffs = rng.standard_normal(len(exps))
        poly = sum(c * np.prod(X ** np.asarray(e, dtype=float), axis=1) for c, e in zip(coeffs, exps))
        out[:, comp] = bubble(grid) * poly
    scale = np.max(np.sqrt(np.sum(grid.cell_gradient(out) ** 2, axis=(1, 2))))
    return out / scale if scale > 0 else out


@dataclass
class SmallStrainScenario:
    params: MaterialParams
    grid: Grid
    uhat: np.ndarray
    ftilde: np.ndarray
    u0: np.ndarray
    M_prime: float = 100.0

    def __post_init__(self):
        if not self.params.delta > 0:
            raise ValidationError("small-strain scenarios need delta > 0")
        phi0 = field.energy(self.adm, self.load, self.y0)
        if not phi0 <= self.M_prime * self.delta**2:
            raise ValidationError("initial energy %.3g exceeds M' delta^2 = %.3g" % (phi0, self.M_prime * self.delta**2))

    @classmethod
    def from_terms(cls, params: MaterialParams, grid: Grid, uhat, ftilde, u0_bubble, M_prime=100.0):
        uh = polynomial_field(grid, uhat)
        u0 = uh + bubble(grid)[:, None] * polynomial_field(grid, u0_bubble)
        return cls(params, grid, uh, polynomial_field(grid, ftilde), u0, M_prime)

    @property
    def delta(self) -> float:
        return self.params.delta

    @cached_property
    def yhat(self) -> DeformationField:
        return DeformationField(self.grid, self.grid.coords + self.delta * self.uhat)

    @cached_property
    def adm(self) -> AdmissibleSet:
        return AdmissibleSet(self.params, self.yhat, self.M_prime * self.delta**2)

    @cached_property
    def load(self) -> LoadField:
        return LoadField(self.grid, self.delta * self.ftilde)

    @cached_property
    def y0(self) -> DeformationField:
        y = self.grid.coords + self.delta * self.u0
        return self.adm.project(DeformationField(self.grid, y))

    def with_params(self, **changes) -> "SmallStrainScenario":
        return SmallStrainScenario(self.params.replace(**changes), self.grid, self.uhat, self.ftilde,
                                   self.u0, self.M_prime)


# steady state -----------------------------------------------------------------------------------

@dataclass
class SteadyStateReport:
    field: DeformationField
    energy: float
    grad_norm: float
    spread: float                 # max pairwise metric distance between starts
    start_energies: list = dc_field(default_factory=list)


def minimize_energy(adm: AdmissibleSet, load: LoadField | None, start: DeformationField,
                    tol: float = 1e-11, max_iters: int = 10000):
    prob = StepProblem(adm, load, None, adm.project(start))
    res = inner_minimize(prob.value, prob.gradient, prob.start, tol=tol,
                         max_iters=max_iters, increment=prob.increment,
                         precondition=prob.precondition, norm=prob.norm)
    return prob.field(res.x), res


def steady_state_report(adm: AdmissibleSet, load: LoadField | None, starts: int = 3, seed: int = 0,
                        tol: float = 1e-11, agree_tol: float = 1e-8, amplitude: float = 0.5,
                        first: DeformationField | None = None) -> SteadyStateReport:
    """Multi-start minimization of the energy; disagreement means the convex regime was left."""
    rng = np.random.default_rng(seed)
    grid = adm.grid
    scale = max(adm.params.delta, 1e-3)
    inits = [first if first is not None else adm.yhat]
    while len(inits) < starts:
        inits.append(adm.yhat + amplitude * scale * random_bubble_field(grid, rng))
    results = []
    for y in inits:
        ys, res = minimize_energy(adm, load, y, tol=tol)
        if res.flagged:
            raise SolverError("steady-state solve flagged (%s), gradient norm %.3g" % (res.flag, res.grad_norm))
        results.append((field.energy(adm, load, ys), ys, res))
    spread = max((field.metric(adm.params, a[1], b[1]) for i, a in enumerate(results) for b in results[i + 1:]),
                 default=0.0)
    if spread > agree_tol:
        raise PropertyViolation("multi-start minimizers disagree (spread %.3g > %.3g); delta too large?"
                                % (spread, agree_tol))
    best = min(results, key=lambda r: r[0])
    return SteadyStateReport(best[1], best[0], best[2].grad_norm, spread, [r[0] for r in results])


def steady_state(adm: AdmissibleSet, load: LoadField | None, **kw) -> DeformationField:
    return steady_state_report(adm, load, **kw).field


# fits -------------------------------------------------------------------------------------------

@dataclass
class DecayReport:
    kind: str
    times: np.ndarray
    gaps: np.ndarray
    rate: float | None = None
    r2: float | None = None
    slope: float | None = None
    window: tuple | None = None
    s: float | None = None
    t_ext: float | None = None
    floor: float = DEFAULT_FLOOR
    extras: dict = dc_field(default_factory=dict)

    @property
    def extinct(self) -> bool:
        return self.t_ext is not None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "rate": self.rate, "r2": self.r2, "slope": self.slope,
               "window": list(self.window) if self.window else None, "s": self.s, "t_ext": self.t_ext,
               "extinct": self.extinct, "floor": self.floor,
               "gap_initial": float(self.gaps[0]), "gap_final": float(self.gaps[-1]),
               "min_gap": float(np.min(self.gaps))}
        out.update(self.extras)
        return out


def fit_window(times, gaps, floor: float = DEFAULT_FLOOR, transient_fraction: float = 0.1) -> np.ndarray:
    """Indices past the transient with gap in [10 floor, gap(0) / 10]."""
    times, gaps = np.asarray(times), np.asarray(gaps)
    first = int(math.ceil(transient_fraction * (len(times) - 1)))
    idx = np.arange(len(times))
    keep = (idx >= first) & (gaps >= 10.0 * floor) & (gaps <= gaps[0] / 10.0)
    return np.flatnonzero(keep)


def _fit(x, y):
    if len(x) < 3:
        raise FitWindowError("fit window has %d samples; need at least 3" % len(x))
    lr = linregress(x, y)
    return float(lr.slope), float(lr.intercept), float(lr.rvalue**2)


def fit_exponential(times, gaps, floor: float = DEFAULT_FLOOR, transient_fraction: float = 0.1) -> DecayReport:
    """Least-squares line through log(gap) against t; the rate is minus its slope."""
    times, gaps = np.asarray(times, float), np.asarray(gaps, float)
    w = fit_window(times, gaps, floor, transient_fraction)
    slope, _, r2 = _fit(times[w], np.log(gaps[w])) if len(w) else _fit([], [])
    return DecayReport("exponential", times, gaps, rate=-slope, r2=r2, slope=slope,
                       window=(float(times[w[0]]), float(times[w[-1]])), floor=floor)


def polynomial_exponent(p_tilde: float) -> float:
    return p_tilde / (2.0 * p_tilde - 2.0)


def fit_polynomial(times, gaps, p_tilde: float, floor: float = DEFAULT_FLOOR,
                   transient_fraction: float = 0.1) -> DecayReport:
    """Line through gap^(1-s) against t; rate C = slope / (s - 1)."""
    if not 1.0 < p_tilde < 2.0:
        raise ValidationError("polynomial decay needs 1 < p_tilde < 2")
    s = polynomial_exponent(p_tilde)
    times, gaps = np.asarray(times, float), np.asarray(gaps, float)
    w = fit_window(times, gaps, floor, transient_fraction)
    slope, _, r2 = _fit(times[w], gaps[w] ** (1.0 - s)) if len(w) else _fit([], [])
    return DecayReport("polynomial", times, gaps, rate=slope / (s - 1.0), r2=r2, slope=slope,
                       window=(float(times[w[0]]), float(times[w[-1]])), s=s, floor=floor)


def detect_extinction(times, gaps, floor: float = DEFAULT_FLOOR) -> DecayReport:
    """First time after which the gap stays at or below ``floor``; None if never."""
    times, gaps = np.asarray(times, float), np.asarray(gaps, float)
    above = np.flatnonzero(gaps > floor)
    if len(above) == 0:
        t_ext = float(times[0])
    elif above[-1] + 1 < len(times):
        t_ext = float(times[above[-1] + 1])
    else:
        t_ext = None
    return DecayReport("extinction", times, gaps, t_ext=t_ext, floor=floor)


def dissipation_bound_margins(cum_dissipation, times, gaps, rate: float, relax: float = 0.9) -> np.ndarray:
    """2 * cumulative dissipation - (1 - exp(-relax * rate * t)) * gap(0), per sample."""
    times = np.asarray(times)
    return 2.0 * np.asarray(cum_dissipation) - (1.0 - np.exp(-relax * rate * times)) * gaps[0]


def analyze(traj: Trajectory, energy_inf: float, floor: float = DEFAULT_FLOOR,
            transient_fraction: float = 0.1) -> DecayReport:
    """Pick the fit matching the viscosity exponent of the trajectory."""
    gaps = traj.energies - energy_inf
    pt = traj.p_tilde
    if pt == 2.0:
        return fit_exponential(traj.times, gaps, floor, transient_fraction)
    if pt < 2.0:
        return fit_polynomial(traj.times, gaps, pt, floor, transient_fraction)
    return detect_extinction(traj.times, gaps, floor)


@dataclass
class DecayRun:
    scenario: SmallStrainScenario
    trajectory: Trajectory
    steady: SteadyStateReport
    report: DecayReport

    @property
    def gaps(self) -> np.ndarray:
        return self.trajectory.energies - self.steady.energy


def run_decay(scenario: SmallStrainScenario, cfg: MmsConfig, floor: float = DEFAULT_FLOOR,
              steady_tol: float = 1e-11, starts: int = 3, seed: int = 0, agree_tol: float = 1e-8,
              on_step=None, delta_prime: float | None = None) -> DecayRun:
    """Steady state, trajectory and fit; ``delta_prime`` defaults to the calibrated smallness threshold."""
    limit = calibrated.DELTA_PRIME if delta_prime is None else delta_prime
    if scenario.delta > limit:
        raise ValidationError("delta %.3g exceeds the calibrated small-strain threshold %.3g" % (scenario.delta, limit))
    adm, load = scenario.adm, scenario.load
    steady = steady_state_report(adm, load, starts=starts, seed=seed, tol=steady_tol, agree_tol=agree_tol)
    traj = run(adm, load, cfg, scenario.y0, on_step=on_step)
    try:
        report = analyze(traj, steady.energy, floor)
    except FitWindowError:
        report = DecayReport("none", traj.times, traj.energies - steady.energy, floor=floor)
    return DecayRun(scenario, traj, steady, report)


# convexity certificates -----------------------------------------------------------------------

def sample_pairs(adm: AdmissibleSet, count: int, seed: int, amplitude: float = 1.0, degree: int = 2):
    """Pairs of admissible fields within ``amplitude * delta`` of the datum (gradient sup-norm)."""
    rng = np.random.default_rng(seed)
    scale = amplitude * max(adm.params.delta, 1e-3)
    grid = adm.grid
    pairs = []
    while len(pairs) < count:
        y0 = adm.yhat + scale * rng.uniform(0.2, 1.0) * random_bubble_field(grid, rng, degree)
        y1 = adm.yhat + scale * rng.uniform(0.2, 1.0) * random_bubble_field(grid, rng, degree)
        if np.all(tensor.det(y0.F) > 0) and np.all(tensor.det(y1.F) > 0):
            pairs.append((y0, y1))
    return pairs


def convexity_moduli(adm: AdmissibleSet, load: LoadField | None, pairs, s_values=(0.25, 0.5, 0.75)) -> np.ndarray:
    """2 [(1-s) phi(y0) + s phi(y1) - phi(y_s)] / (s (1-s) |grad y1 - grad y0|_{L2}^2) per pair and s."""
    out = []
    for y0, y1 in pairs:
        e0, e1 = field.energy(adm, load, y0), field.energy(adm, load, y1)
        nrm2 = field.lp_norm_cells(adm.grid, y1.F - y0.F, 2.0) ** 2
        for s in s_values:
            ys = DeformationField(adm.grid, (1 - s) * y0.y + s * y1.y)
            gap = (1 - s) * e0 + s * e1 - field.energy(adm, load, ys)
            out.append(2.0 * gap / (s * (1 - s) * nrm2))
    return np.array(out)


def calibrate_lambda(adm: AdmissibleSet, load: LoadField | None, pairs, s_values=(0.25, 0.5, 0.75)) -> float:
    """Half the smallest sampled convexity modulus."""
    return 0.5 * float(np.min(convexity_moduli(adm, load, pairs, s_values)))


def metric_convexity_constant(params: MaterialParams, rigidity: float, grad_sup: float) -> float:
    """Constant making D(y_s, y0)^p <= s^p D(y1, y0)^p (1 + C x^(p-1) + C x) hold for x <= grad_sup.

    With r = rigidity * |A|_max / |A|_min it follows from the power inequality
    and Hoelder's inequality applied to C_s - C_0 = s (C_1 - C_0) - s (1 - s) dF^T dF.
    """
    pt = params.p_tilde
    r = rigidity * params.C0 / params.c0
    return tensor.power_inequality_constant(pt) * max(r, r ** (pt - 1.0)) + r**pt * grad_sup ** (pt - 1.0)


def metric_convexity_ratios(params: MaterialParams, pairs, rigidity: float | None = None,
                            s_values=(0.25, 0.5, 0.75)) -> np.ndarray:
    """LHS / RHS of the generalized metric convexity inequality for each pair and s (<= 1 passes)."""
    from .propcheck import rigidity_ratio
    out = []
    for y0, y1 in pairs:
        dF = y1.F - y0.F
        x = float(np.max(np.sqrt(np.sum(dF * dF, axis=(1, 2)))))
        K = rigidity if rigidity is not None else rigidity_ratio(y0, y1, params.p_tilde)
        C = metric_convexity_constant(params, K, x)
        base = field.metric_pow(params, y1, y0)
        pt = params.p_tilde
        for s in s_values:
            ys = DeformationField(y0.grid, (1 - s) * y0.y + s * y1.y)
            rhs = s**pt * base * (1.0 + C * x ** (pt - 1.0) + C * x)
            out.append(field.metric_pow(params, ys, y0) / rhs)
    return np.array(out)


def calibrate_delta_prime(make_scenario, lo: float = 0.01, hi: float = 2.0, iters: int = 12,
                          seed: int = 0, count: int = 10) -> float:
    """Largest delta (to bisection accuracy) where multi-start agrees and convexity holds on samples."""

    def ok(delta):
        try:
            sc = make_scenario(delta)
            adm, load = sc.adm, sc.load
            steady_state_report(adm, load, seed=seed, agree_tol=1e-8 * max(1.0, delta / 0.01))
            lam = np.min(convexity_moduli(adm, load, sample_pairs(adm, count, seed)))
            return lam > 0
        except (PropertyViolation, SolverError, ValidationError, FloatingPointError):
            return False

    if not ok(lo):
        raise ValidationError("smallest delta %.3g already fails the convexity checks" % lo)
    if ok(hi):
        return hi
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo
