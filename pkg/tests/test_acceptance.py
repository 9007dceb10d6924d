"""Acceptance criteria at their stated tolerances; each test reports one PASS/FAIL line."""
import os

import numpy as np
import pytest

from kvmms import calibrated, cli, config, decay, diagnostics, field, mms, propcheck, slope, tensor
from kvmms.densities import D_pointwise, P_eval, R_eval, W_eval, W_value
from kvmms.field import AdmissibleSet, DeformationField, LoadField, grid_for

from conftest import fd_matrix_derivative, random_F, rel_err

PRESETS = {1.5: "decay_p1_5", 2.0: "decay_p2", 3.0: "decay_p3"}
FLOOR = 1e-10


@pytest.fixture(scope="session")
def decay_runs():
    """The three reference decay runs (T = 50), shared by the dynamic criteria."""
    out = {}
    for pt, name in PRESETS.items():
        cfg = config.load_preset(name)
        opts = cfg.section("decay")
        dr = decay.run_decay(cfg.scenario(), cfg.mms, floor=opts["floor"], steady_tol=opts["steady_tol"],
                             starts=opts["starts"], seed=cfg.seed, agree_tol=opts["agree_tol"])
        checkpoints = list(range(0, len(dr.trajectory), cfg.mms.checkpoint_every))
        out[pt] = (cfg, dr, checkpoints)
    return out


def _reference_adm(cfg, n):
    terms = cfg.section("scenario")
    return decay.SmallStrainScenario.from_terms(cfg.params, grid_for(2, n), terms["uhat"], terms["ftilde"],
                                                terms["u0_bubble"]).adm


@pytest.mark.criterion(1, "derivative oracles")
def test_criterion_01_derivative_oracles(criterion, ref_scenario):
    rng = np.random.default_rng(0)
    params = ref_scenario.params
    errs = {"dW": [], "dP": [], "dR": [], "energy": [], "metric": []}
    for _ in range(100):
        F = random_F(rng)
        errs["dW"].append(rel_err(W_eval(params, F).dF, fd_matrix_derivative(lambda X: float(W_value(params, X)), F)))
        G = rng.standard_normal((2, 2, 2))
        errs["dP"].append(rel_err(P_eval(params, G).dG,
                                  fd_matrix_derivative(lambda X: float(P_eval(params, X).value), G)))
    for pt in (1.5, 2.0, 3.0):
        P = params.replace(p_tilde=pt)
        count = 0
        while count < 100:
            F, Fd = random_F(rng), rng.standard_normal((2, 2))
            # the rate density is not smooth where the Cauchy-Green rate vanishes
            if tensor.frobenius(tensor.cauchy_green_rate(F, Fd)) < 0.1:
                continue
            count += 1
            fd = fd_matrix_derivative(lambda X: float(R_eval(P, F, X).value), Fd)
            errs["dR"].append(rel_err(R_eval(P, F, Fd).dFdot, fd))
    adm, load, grid = ref_scenario.adm, ref_scenario.load, ref_scenario.grid
    for _ in range(100):
        y = adm.yhat + 0.2 * decay.random_bubble_field(grid, rng)
        # smooth directions: random nodal noise makes the directional derivative cancel
        v = decay.random_bubble_field(grid, rng)
        eps = 1e-6
        fd = (field.energy(adm, load, y + eps * v) - field.energy(adm, load, y - eps * v)) / (2 * eps)
        errs["energy"].append(abs(np.sum(field.energy_gradient(adm, load, y) * v) - fd) / abs(fd))
    for pt in (1.5, 2.0, 3.0):
        P = params.replace(p_tilde=pt)
        for _ in range(100 // 3 + 1):
            y1 = adm.yhat + 0.2 * decay.random_bubble_field(grid, rng)
            y2 = DeformationField(grid, 1.1 * y1.y) + 0.02 * decay.random_bubble_field(grid, rng)
            v = decay.random_bubble_field(grid, rng)
            eps = 1e-6
            fd = (field.metric_pow(P, y1, y2 + eps * v) - field.metric_pow(P, y1, y2 - eps * v)) / (2 * eps)
            errs["metric"].append(abs(np.sum(field.metric_gradient_second_arg(P, y1, y2) * v) - fd) / abs(fd))
    worst = {k: max(v) for k, v in errs.items()}
    criterion.update({k: "%.1e" % v for k, v in worst.items()})
    assert all(len(v) >= 100 for v in errs.values())
    assert max(worst.values()) <= 1e-6


@pytest.mark.criterion(2, "frame indifference")
def test_criterion_02_frame_indifference(criterion, ref_scenario):
    rng = np.random.default_rng(0)
    params = ref_scenario.params
    worst = 0.0
    for k in range(100):
        Q = tensor.random_rotation(seed=k)
        F, F2, Fd = random_F(rng), random_F(rng), rng.standard_normal((2, 2))
        w, r, dd = W_eval(params, F).value, R_eval(params, F, Fd).value, D_pointwise(params, F, F2)
        worst = max(worst, abs(W_eval(params, Q @ F).value - w) / abs(w),
                    abs(R_eval(params, Q @ F, Q @ Fd).value - r) / r,
                    abs(D_pointwise(params, Q @ F, tensor.random_rotation(seed=1000 + k) @ F2) - dd) / dd)
    cfg = mms.MmsConfig(tau=0.02, T=1.0)
    zero = LoadField.zero(ref_scenario.grid)
    Q = tensor.random_rotation(seed=3)
    adm = ref_scenario.adm
    a = mms.run(adm, zero, cfg, ref_scenario.y0)
    b = mms.run(AdmissibleSet(params, adm.yhat.rotated(Q), adm.M), zero, cfg, ref_scenario.y0.rotated(Q))
    equiv = max(field.metric(params, fa.rotated(Q), fb) for fa, fb in zip(a.fields, b.fields))
    criterion.update(density_rel="%.1e" % worst, trajectory="%.1e" % equiv)
    assert worst <= 1e-12
    assert not a.flagged_steps and not b.flagged_steps
    assert equiv <= 10 * cfg.inner_tol


@pytest.mark.slow
@pytest.mark.criterion(3, "exact descent")
def test_criterion_03_exact_descent(criterion, decay_runs, convergence_runs):
    trajs = [dr.trajectory for _, dr, _ in decay_runs.values()] + list(convergence_runs.values())
    margins = np.concatenate([t.descent_margins() for t in trajs])
    flagged = sum(len(t.flagged_steps) for t in trajs)
    criterion.update(runs=len(trajs), steps=len(margins), min_margin="%.2e" % margins.min(), flagged=flagged)
    assert flagged == 0
    assert np.all(margins >= 0)


@pytest.fixture(scope="session")
def convergence_runs(ref_cfg):
    sc = ref_cfg.scenario()
    conv = ref_cfg.section("convergence")
    return {tau: mms.run(sc.adm, sc.load, mms.MmsConfig(tau=tau, T=conv["T"]), sc.y0) for tau in conv["taus"]}


@pytest.mark.slow
@pytest.mark.criterion(4, "energy-dissipation balance refinement")
def test_criterion_04_edb_refinement(criterion, ref_cfg, convergence_runs):
    assert ref_cfg.section("convergence")["taus"] == [0.01, 0.005, 0.0025]
    sc = ref_cfg.scenario()
    reps = [diagnostics.edb_report(sc.adm, sc.load, convergence_runs[tau]) for tau in sorted(convergence_runs, reverse=True)]
    edb = [abs(r.final_residual) for r in reps]
    diss = [abs(r.dissipation_residual) for r in reps]
    ratios_edb = [b / a for a, b in zip(edb, edb[1:])]
    ratios_diss = [b / a for a, b in zip(diss, diss[1:])]
    criterion.update(edb=["%.3f" % r for r in ratios_edb], dissipation=["%.3f" % r for r in ratios_diss])
    assert max(ratios_edb) <= 0.75
    assert max(ratios_diss) <= 0.75


@pytest.mark.slow
@pytest.mark.criterion(5, "slope consistency")
def test_criterion_05_slope_consistency(criterion, decay_runs):
    worst_recompute = worst_residual = 0.0
    worst_excess = -np.inf
    checked = 0
    for pt, (cfg, dr, checkpoints) in decay_runs.items():
        sc = dr.scenario
        inner_tol = cfg.mms.inner_tol
        rig = calibrated.SAFETY * max(v for (n, p), v in calibrated.RIGIDITY.items() if p == pt)
        lam = calibrated.LAMBDA_HAT[cfg.name]
        for n in checkpoints:
            y = dr.trajectory.fields[n]
            res = slope.local_slope(sc.adm, sc.load, y, tol=cfg.section("slope")["tol"])
            assert not res.flagged, (pt, n, res.flag)
            if res.slope > 0:
                worst_recompute = max(worst_recompute,
                                      abs(slope.slope_recompute(sc.adm, y, res.wbar) - res.slope) / res.slope)
            worst_residual = max(worst_residual, res.residual)
            assert res.residual <= inner_tol
            spec = propcheck.SampleSpec(cfg.seed + n, 50, 0.1 * sc.delta, 2)
            rec = propcheck.slope_representation_check(sc.adm, sc.load, y, spec, lam, rig, slope=res.slope, tol=1e-6)
            worst_excess = max(worst_excess, rec["max_ratio"] - res.slope)
            checked += 1
    criterion.update(checkpoints=checked, recompute="%.1e" % worst_recompute, residual="%.1e" % worst_residual,
                     max_ratio_minus_slope="%.2e" % worst_excess)
    assert worst_recompute <= 1e-10
    assert worst_excess <= 1e-6


@pytest.mark.slow
@pytest.mark.criterion(6, "exponential decay for quadratic viscosity")
def test_criterion_06_decay_p2(criterion, decay_runs):
    _, dr, _ = decay_runs[2.0]
    rep = dr.report
    assert rep.kind == "exponential"
    diss = diagnostics.cumulative_dissipation(dr.scenario.adm, dr.trajectory)
    margins = decay.dissipation_bound_margins(diss, dr.trajectory.times, dr.gaps, rep.rate, relax=0.9)
    criterion.update(r2="%.6f" % rep.r2, rate="%.5f" % rep.rate, min_margin="%.2e" % margins.min())
    assert rep.r2 >= 0.98
    assert rep.rate > 0
    assert np.all(margins >= 0)


@pytest.mark.slow
@pytest.mark.criterion(7, "polynomial decay for sub-quadratic viscosity")
def test_criterion_07_decay_p1_5(criterion, decay_runs):
    _, dr, _ = decay_runs[1.5]
    rep = dr.report
    criterion.update(kind=rep.kind, s=rep.s, r2="%.6f" % rep.r2, slope="%.4f" % rep.slope)
    assert rep.kind == "polynomial" and rep.s == 1.5
    assert rep.r2 >= 0.95
    assert rep.slope > 0


@pytest.mark.slow
@pytest.mark.criterion(8, "finite-time extinction for super-quadratic viscosity")
def test_criterion_08_extinction(criterion, decay_runs):
    cfg3, dr3, _ = decay_runs[3.0]
    cfg2, dr2, _ = decay_runs[2.0]
    assert cfg3.mms.T == cfg2.mms.T == 50.0 and cfg3.mms.tau == cfg2.mms.tau
    assert cfg3.sections["scenario"] == cfg2.sections["scenario"]
    gap2 = float(dr2.gaps[-1])
    criterion.update(t_ext=dr3.report.t_ext, gap_p2_final="%.3e" % gap2)
    assert dr3.report.extinct and dr3.report.t_ext <= 50.0
    assert gap2 >= 100 * FLOOR


@pytest.mark.slow
@pytest.mark.criterion(9, "rigidity and Korn constants")
def test_criterion_09_rigidity_korn(criterion, ref_cfg):
    opts = ref_cfg.section("propcheck")
    pt = ref_cfg.params.p_tilde
    worst = {}
    for n in (17, 33):
        adm = _reference_adm(ref_cfg, n)
        spec = propcheck.SampleSpec(0, 500, float(opts["amplitude"]), int(opts["degree"]), float(opts["M"]))
        rig = propcheck.rigidity_study(adm, spec)
        korn = propcheck.korn_study(adm, spec)
        assert rig["finite"] and korn["finite"]
        worst[n] = (rig["max"] / calibrated.RIGIDITY[(n, pt)], korn["max"] / calibrated.KORN[(n, pt)])
    grid = grid_for(2, 17)
    psi = np.zeros(grid.num_nodes)
    inner = grid.layer_mask(2)
    psi[inner] = np.random.default_rng(0).standard_normal(int(inner.sum()))
    u = propcheck.symmetric_gradient_field(grid, psi)
    half = propcheck.korn_ratio(DeformationField.identity(grid), u, pt)
    criterion.update(**{"n%d" % n: "rig %.3f korn %.3f of calibrated" % v for n, v in worst.items()},
                     symmetric=repr(half))
    assert max(max(v) for v in worst.values()) <= calibrated.SAFETY
    assert half == 0.5


@pytest.mark.criterion(10, "metric axioms")
def test_criterion_10_metric_axioms(criterion, ref_cfg, ref_scenario):
    params, adm = ref_scenario.params, ref_scenario.adm
    fields = propcheck.sample_admissible(adm, propcheck.SampleSpec(0, 600, 0.1, 2)).fields
    slack = max(field.metric(params, a, c) - field.metric(params, a, b) - field.metric(params, b, c)
                for a, b, c in zip(fields[0::3], fields[1::3], fields[2::3]))
    self_dist = max(field.metric(params, y, y) for y in fields)
    opts = ref_cfg.section("propcheck")
    consts = []
    for n in (17, 33):
        ne = propcheck.norm_equivalence_study(_reference_adm(ref_cfg, n), propcheck.SampleSpec(0, int(opts["count"]), 0.1, 2))
        consts.append((ne["c"], ne["C"]))
    (c1, C1), (c2, C2) = consts
    criterion.update(triangle_slack="%.1e" % slack, self_distance=self_dist,
                     c="%.3f/%.3f" % (c1, c2), C="%.3f/%.3f" % (C1, C2))
    assert slack <= 1e-12
    assert self_dist == 0.0
    assert all(0 < c <= C < np.inf for c, C in consts)
    assert max(c1, c2) <= 2 * min(c1, c2) and max(C1, C2) <= 2 * min(C1, C2)


@pytest.mark.slow
@pytest.mark.criterion(11, "steady state")
def test_criterion_11_steady_state(criterion, decay_runs, ref_scenario):
    assert ref_scenario.delta == 0.01
    rep = decay.steady_state_report(ref_scenario.adm, ref_scenario.load, starts=3, agree_tol=1e-8)
    min_gap = min(float(np.min(dr.gaps)) for _, dr, _ in decay_runs.values())
    spreads = [dr.steady.spread for _, dr, _ in decay_runs.values()]
    monotone = all(np.all(np.diff(dr.gaps) <= 0) for _, dr, _ in decay_runs.values())
    criterion.update(spread="%.1e" % rep.spread, min_gap="%.2e" % min_gap, monotone=monotone)
    assert rep.spread <= 1e-8 and max(spreads) <= 1e-8
    assert min_gap >= -1e-12
    assert monotone


@pytest.mark.slow
@pytest.mark.criterion(12, "determinism")
def test_criterion_12_determinism(criterion, tmp_path):
    def tree(root):
        out = {}
        for dirpath, _, files in os.walk(root):
            for f in files:
                p = os.path.join(dirpath, f)
                out[os.path.relpath(p, root)] = open(p, "rb").read()
        return out

    commands = [["slope"], ["propcheck", "--seed", "5"], ["simulate", "--tau", "0.5"],
                ["convergence", "--jobs", "2"]]
    compared = 0
    for argv in commands:
        a, b = tmp_path / (argv[0] + "_a"), tmp_path / (argv[0] + "_b")
        assert cli.main(argv + ["--out", str(a)]) == 0
        assert cli.main(argv + ["--out", str(b)]) == 0
        ta, tb = tree(a), tree(b)
        assert ta == tb, argv
        compared += len(ta)
    criterion.update(commands=len(commands), files=compared)
