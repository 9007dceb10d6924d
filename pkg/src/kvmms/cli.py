"""Command-line front end.

Subcommands: simulate, slope, decay, propcheck, convergence.  Every run writes
into a temporary directory that is renamed onto ``--out`` only on success.
Exit codes: 0 ok, 1 validation error, 2 solver failure, 3 property violation.
"""
from __future__ import annotations

import argparse
import io
import csv
import os
import platform
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, calibrated, config, decay, diagnostics, field, mms, propcheck, slope
from .errors import InfeasibleStateError, KvError, PropertyViolation, SolverError, ValidationError
from .field import fmt, json_dumps

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_PROPERTY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration (defaults to a built-in preset)")
    common.add_argument("--out", default="out", help="output directory (replaced atomically)")
    common.add_argument("--seed", type=int, help="override the configuration seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers across independent runs")
    common.add_argument("--tau", type=float, help="override the time step")
    common.add_argument("--p-tilde", dest="p_tilde", type=float, help="override the viscosity exponent")
    parser = _Parser(prog="kvmms", description="Minimizing-movement solver and diagnostics for "
                     "frame-indifferent Kelvin-Voigt second-grade viscoelasticity.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="run the time stepper and energy-balance diagnostics")
    sub.add_parser("slope", parents=[common], help="local slope and dual velocity at the initial state")
    sub.add_parser("decay", parents=[common], help="long-time decay study (presets 1.5, 2, 3 by default)")
    sub.add_parser("propcheck", parents=[common], help="sampled rigidity, Korn, metric and slope checks")
    sub.add_parser("convergence", parents=[common], help="time-step refinement study")
    return parser


def _resolve(args, default_preset: str = "ref_small_strain") -> config.RunConfig:
    cfg = config.load_config(args.config) if args.config else config.load_preset(default_preset)
    return cfg.with_overrides(tau=args.tau, p_tilde=args.p_tilde, seed=args.seed)


def _write(outdir: str, name: str, content):
    path = os.path.join(outdir, name)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    mode = "wb" if isinstance(content, bytes) else "w"
    with open(path, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
        fh.write(content)


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


# simulate ---------------------------------------------------------------------------------------

def cmd_simulate(cfg: config.RunConfig, args, outdir: str) -> dict:
    sc = cfg.scenario()
    adm, load = sc.adm, sc.load

    def check(n, y, rec):
        propcheck.apriori_check(adm, y, load, dump_dir=os.path.join(outdir, "counterexamples"))

    def checkpoint(n, y):
        _write(outdir, "fields/step_%06d.bin" % n, field.field_to_bytes(y, adm.params.p_tilde, n, n * cfg.mms.tau))

    _write(outdir, "fields/step_000000.bin", field.field_to_bytes(sc.y0, adm.params.p_tilde, 0, 0.0))
    traj = mms.run(adm, load, cfg.mms, sc.y0, on_step=check, on_checkpoint=checkpoint)
    if traj.flagged_steps:
        raise SolverError("%d flagged steps (first %d)" % (len(traj.flagged_steps), traj.flagged_steps[0]))
    _write(outdir, "fields/final.bin", field.field_to_bytes(traj.fields[-1], adm.params.p_tilde,
                                                             len(traj) - 1, traj.records[-1].t))
    _write(outdir, "trajectory.csv", traj.to_csv())
    margins = traj.descent_margins()
    summary = {"scenario": cfg.name, "steps": len(traj) - 1, "tau": cfg.mms.tau, "p_tilde": adm.params.p_tilde,
               "energy_initial": traj.energies[0], "energy_final": traj.energies[-1],
               "min_descent_margin": float(margins.min()) if len(margins) else 0.0,
               "descent_holds": bool(np.all(margins >= 0)), "flagged_steps": 0}
    if cfg.section("diagnostics")["edb"]:
        rep = diagnostics.edb_report(adm, load, traj, slope_tol=cfg.section("diagnostics")["slope_tol"])
        _write(outdir, "edb.csv", rep.to_csv())
        summary["edb"] = rep.summary()
    _write(outdir, "summary.json", json_dumps(summary))
    return summary


# slope ------------------------------------------------------------------------------------------

def cmd_slope(cfg: config.RunConfig, args, outdir: str) -> dict:
    sc = cfg.scenario()
    adm, load, y = sc.adm, sc.load, sc.y0
    res = slope.local_slope(adm, load, y, tol=cfg.section("slope")["tol"])
    if res.flagged:
        raise SolverError("dual solve flagged: %s" % res.flag)
    out = {"scenario": cfg.name, "slope": res.slope, "recomputed": slope.slope_recompute(adm, y, res.wbar),
           "euler_lagrange_residual": res.residual, "iterations": res.iterations,
           "energy": field.energy(adm, load, y)}
    _write(outdir, "slope.json", json_dumps(out))
    _write(outdir, "fields/wbar.bin", field.field_to_bytes(field.DeformationField(adm.grid, res.wbar),
                                                           adm.params.p_tilde))
    return out


# decay ------------------------------------------------------------------------------------------

def _decay_job(raw: dict) -> tuple[str, dict, str]:
    cfg = config.from_dict(raw)
    sc = cfg.scenario()
    opts = cfg.section("decay")
    dr = decay.run_decay(sc, cfg.mms, floor=opts["floor"], steady_tol=opts["steady_tol"],
                         starts=opts["starts"], seed=cfg.seed, agree_tol=opts["agree_tol"])
    if dr.trajectory.flagged_steps:
        raise SolverError("decay run %s has flagged steps" % cfg.name)
    rep = dr.report
    info = rep.to_dict()
    info.update(scenario=cfg.name, p_tilde=sc.params.p_tilde, tau=cfg.mms.tau, T=cfg.mms.T,
                steady_energy=dr.steady.energy, steady_spread=dr.steady.spread,
                delta_prime=calibrated.DELTA_PRIME, calibration="empirical")
    if rep.kind == "exponential":
        diss = diagnostics.cumulative_dissipation(sc.adm, dr.trajectory)
        margins = decay.dissipation_bound_margins(diss, dr.trajectory.times, dr.gaps, rep.rate)
        info["dissipation_bound_min_margin"] = float(margins.min())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "t", "gap"])
    for n, (t, g) in enumerate(zip(dr.trajectory.times, dr.gaps)):
        w.writerow([n, fmt(t), fmt(g)])
    return cfg.name, info, buf.getvalue()


def cmd_decay(cfg_unused, args, outdir: str) -> dict:
    if args.config:
        cfgs = [_resolve(args)]
    else:
        names = {1.5: "decay_p1_5", 2.0: "decay_p2", 3.0: "decay_p3"}
        if args.p_tilde is not None and args.p_tilde in names:
            chosen = [names[args.p_tilde]]
        elif args.p_tilde is not None:
            chosen = ["decay_p2"]
        else:
            chosen = list(names.values())
        cfgs = [config.load_preset(n).with_overrides(tau=args.tau, p_tilde=args.p_tilde, seed=args.seed)
                for n in chosen]
    results = _map(_decay_job, [c.to_dict() for c in cfgs], args.jobs)
    report = {}
    for name, info, gap_csv in results:
        report[name] = info
        _write(outdir, "decay_%s.csv" % name, gap_csv)
    _write(outdir, "decay.json", json_dumps(report))
    return report


# propcheck ----------------------------------------------------------------------------------------

def _propcheck_grid(job) -> dict:
    raw, n = job
    cfg = config.from_dict(raw)
    opts = cfg.section("propcheck")
    adm = decay.SmallStrainScenario.from_terms(
        cfg.params, field.grid_for(cfg.params.d, n), cfg.section("scenario")["uhat"],
        cfg.section("scenario")["ftilde"], cfg.section("scenario")["u0_bubble"]).adm
    spec = propcheck.SampleSpec(cfg.seed, int(opts["count"]), float(opts["amplitude"]), int(opts["degree"]),
                                float(opts["M"]))
    return {"n": n, "rigidity": propcheck.rigidity_study(adm, spec), "korn": propcheck.korn_study(adm, spec),
            "norm_equivalence": propcheck.norm_equivalence_study(adm, spec)}


def cmd_propcheck(cfg: config.RunConfig, args, outdir: str) -> dict:
    opts = cfg.section("propcheck")
    grids = [int(n) for n in opts["grids"]]
    per_grid = _map(_propcheck_grid, [(cfg.to_dict(), n) for n in grids], args.jobs)
    report = {"grids": {str(r["n"]): r for r in per_grid}, "violations": []}
    pt = cfg.params.p_tilde
    for r in per_grid:
        n = r["n"]
        for key, table in (("rigidity", calibrated.RIGIDITY), ("korn", calibrated.KORN)):
            limit = table.get((n, pt))
            r[key]["calibrated"] = limit
            if limit is not None and not r[key]["max"] <= calibrated.SAFETY * limit:
                report["violations"].append("%s ratio %.6g > %.3g x %.6g on n=%d"
                                            % (key, r[key]["max"], calibrated.SAFETY, limit, n))
    ne = [r["norm_equivalence"] for r in per_grid]
    report["norm_equivalence_h_stable"] = bool(
        max(e["c"] for e in ne) <= 2 * min(e["c"] for e in ne) and max(e["C"] for e in ne) <= 2 * min(e["C"] for e in ne))
    if not report["norm_equivalence_h_stable"]:
        report["violations"].append("norm-equivalence constants vary by more than a factor 2")
    # slope representation at the initial state of the scenario grid
    sc = cfg.scenario()
    lam = calibrated.LAMBDA_HAT.get(cfg.name, 0.0)
    rig = calibrated.SAFETY * calibrated.RIGIDITY.get((cfg.n, pt), max(calibrated.RIGIDITY.values()))
    spec = propcheck.SampleSpec(cfg.seed, int(opts["slope_count"]), 0.1 * cfg.params.delta, int(opts["degree"]))
    try:
        report["slope_representation"] = propcheck.slope_representation_check(
            sc.adm, sc.load, sc.y0, spec, lam, rig, dump_dir=None)
    except PropertyViolation as exc:
        report["violations"].append(str(exc))
    _write(outdir, "propcheck.json", json_dumps(report))
    if report["violations"]:
        raise PropertyViolation("; ".join(report["violations"]))
    return report


# convergence ------------------------------------------------------------------------------------

def _convergence_job(raw: dict) -> dict:
    cfg = config.from_dict(raw)
    sc = cfg.scenario()
    traj = mms.run(sc.adm, sc.load, cfg.mms, sc.y0)
    rep = diagnostics.edb_report(sc.adm, sc.load, traj, slope_tol=cfg.section("diagnostics")["slope_tol"])
    return {"tau": cfg.mms.tau, "steps": len(traj) - 1, "edb_residual": rep.final_residual,
            "dissipation_identity_residual": rep.dissipation_residual,
            "final": traj.fields[-1].y.tolist(), "shared": [f.y.tolist() for f in _shared_fields(traj, cfg)]}


def _shared_fields(traj, cfg):
    times = np.linspace(0.0, cfg.section("convergence")["T"], 11)
    return [traj.at_time(t) for t in times]


def cmd_convergence(cfg: config.RunConfig, args, outdir: str) -> dict:
    conv = cfg.section("convergence")
    taus = [float(t) for t in conv["taus"]]
    raws = []
    for tau in taus:
        raw = cfg.to_dict()
        raw["mms"]["tau"], raw["mms"]["T"] = tau, float(conv["T"])
        raws.append(raw)
    rows = _map(_convergence_job, raws, args.jobs)
    grid = cfg.grid
    for a, b in zip(rows, rows[1:]):
        dists = [field.metric(cfg.params, field.DeformationField(grid, np.array(u)), field.DeformationField(grid, np.array(v)))
                 for u, v in zip(a["shared"], b["shared"])]
        b["self_distance_to_previous"] = max(dists)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "steps", "edb_residual", "dissipation_identity_residual", "self_distance_to_previous"])
    for r in rows:
        r.pop("final"), r.pop("shared")
        w.writerow([fmt(r["tau"]), r["steps"], fmt(r["edb_residual"]), fmt(r["dissipation_identity_residual"]),
                    fmt(r.get("self_distance_to_previous", float("nan")))])
    ratios = {
        "edb": [abs(b["edb_residual"]) / abs(a["edb_residual"]) for a, b in zip(rows, rows[1:])],
        "dissipation_identity": [abs(b["dissipation_identity_residual"]) / abs(a["dissipation_identity_residual"])
                                 for a, b in zip(rows, rows[1:])],
    }
    out = {"scenario": cfg.name, "rows": rows, "ratios": ratios}
    _write(outdir, "convergence.csv", buf.getvalue())
    _write(outdir, "convergence.json", json_dumps(out))
    return out


COMMANDS = {"simulate": cmd_simulate, "slope": cmd_slope, "decay": cmd_decay,
            "propcheck": cmd_propcheck, "convergence": cmd_convergence}


def _error_record(code: int, exc: Exception) -> str:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, PropertyViolation) and exc.dump:
        rec["dump"] = exc.dump
    return json_dumps(rec, indent=0).replace("\n", " ").strip()


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    tmp = None
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise ValidationError("--jobs must be at least 1")
        cfg = None if args.command == "decay" else _resolve(args)
        out = os.path.abspath(args.out)
        parent = os.path.dirname(out)
        os.makedirs(parent, exist_ok=True)
        tmp = tempfile.mkdtemp(prefix=".kvmms-", dir=parent)
        COMMANDS[args.command](cfg, args, tmp)
        # no timestamps: repeated runs must be byte-identical
        options = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "command")}
        meta = {"command": args.command, "options": options, "version": __version__, "python": platform.python_version(),
                "numpy": np.__version__}
        _write(tmp, "meta.json", json_dumps(meta))
        if os.path.isdir(out):
            old = tempfile.mkdtemp(prefix=".kvmms-old-", dir=parent)
            os.replace(out, os.path.join(old, "prev"))
            os.replace(tmp, out)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(tmp, out)
        tmp = None
        print("wrote %s" % out)
        return EXIT_OK
    except ValidationError as exc:
        code, err = EXIT_VALIDATION, exc
    except PropertyViolation as exc:
        code, err = EXIT_PROPERTY, exc
    except (SolverError, InfeasibleStateError, FloatingPointError) as exc:
        code, err = EXIT_SOLVER, exc
    except KvError as exc:
        code, err = EXIT_SOLVER, exc
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)
    print("kvmms: error: %s" % err, file=sys.stderr)
    print(_error_record(code, err), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
