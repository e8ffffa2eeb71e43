"""Command-line front end.

Environment overrides:
    BATTFD_OUTPUT_DIR  root for outputs when --out is not given
    BATTFD_WORKERS     worker processes for ``campaign``
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io
from .detector import LearningLedger, Thresholds, decide, lifetime_update
from .errors import BattFDError, ConfigurationError, LearningGateError
from .gpr import GPModel
from .identify import identify
from .observers import DEFAULT_GAMMAS, best_report, gamma_sweep
from .plant import CycleRecord
from . import scenario as scn

log = logging.getLogger("battfd")


def _out_dir(args, name, fallback=None):
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("BATTFD_OUTPUT_DIR")
    if env:
        return Path(env) / name
    if fallback:
        return Path(fallback)
    return Path("battfd_out") / name


def _workers(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get("BATTFD_WORKERS")
    return int(env) if env else 1


def cmd_simulate(args):
    sc = scn.resolve_scenario(args.scenario)
    seed = args.seed if args.seed is not None else sc.seeds["test"]
    rec = scn.simulate(sc, seed, with_fault=not args.no_fault, cycle=args.cycle)
    out = _out_dir(args, sc.name, sc.output_dir)
    rec.save(out / "record.csv")
    print(f"wrote {out / 'record.csv'} ({len(rec)} samples)")
    return 0


def cmd_detect(args):
    sc = scn.resolve_scenario(args.scenario)
    models = scn.prepare(sc, gp_dir=args.gp_dir)
    record = CycleRecord.load(args.record) if args.record else None
    th = Thresholds.load(args.thresholds) if args.thresholds else None
    res = scn.detect(sc, models=models, record=record, thresholds=th)
    out = _out_dir(args, sc.name, sc.output_dir)
    scn.write_detection(res, out)
    s = res.summary()
    print(f"{sc.name}: max|r_V| {s['max_abs_r_V']:.4g} V, max|r_T| {s['max_abs_r_T']:.4g} K, "
          f"fault flagged: {s['decision']['any_fault']}")
    if s["shorter_than_settling"]:
        print("note: record is shorter than the observer settling horizon")
    return 0


def cmd_calibrate(args):
    sc = scn.resolve_scenario(args.scenario)
    if args.cycles:
        spec = dict(sc.thresholds, source="calibrate", seeds=list(range(args.first_seed, args.first_seed + args.cycles)))
        sc = sc.with_value("thresholds", spec)
    elif sc.thresholds["source"] != "calibrate":
        spec = dict(sc.thresholds, source="calibrate", seeds=[sc.seeds["train"]])
        sc = sc.with_value("thresholds", spec)
    models = scn.prepare(sc, gp_dir=args.gp_dir)
    th = scn.thresholds_for(sc, models)
    out = _out_dir(args, sc.name, sc.output_dir)
    th.save(out / "thresholds.cfg")
    print(f"delta_V = {th.delta_V:.6g} V, delta_T = {th.delta_T:.6g} K over {len(th.provenance)} cycles")
    return 0


def cmd_learn(args):
    """One step of the lifetime loop on a recorded cycle."""
    sc = scn.resolve_scenario(args.scenario)
    out = _out_dir(args, sc.name, sc.output_dir)
    models = scn.observer_models(sc)
    pv, pt = out / "gp_voltage.json", out / "gp_thermal.json"
    if pv.exists() and pt.exists():
        models.gp_v, models.gp_t = GPModel.load(pv), GPModel.load(pt)
    if args.thresholds:
        th = Thresholds.load(args.thresholds)
    elif models.learning:
        th = scn.thresholds_for(sc, models)
    else:
        th = Thresholds(args.bootstrap_delta_v, args.bootstrap_delta_t, ("bootstrap",))
    record = CycleRecord.load(args.record)
    dec = decide(scn.residuals(models, record), th, sc.persistence)
    ledger_path = out / "learning_ledger.json"
    ledger = LearningLedger.from_dict(io.read_json(ledger_path)) if ledger_path.exists() else LearningLedger()
    gp_v, gp_t = lifetime_update(ledger, record, dec, lambda r: scn.train(sc, models, r), (models.gp_v, models.gp_t))
    ledger.save(ledger_path)
    if dec.any_fault:
        raise LearningGateError(
            f"cycle {record.cycle} was flagged faulty (first crossings V {dec.first_voltage}, "
            f"T {dec.first_thermal}); the lifetime-learning gate keeps the models trained on cycle "
            f"{ledger.trained_on}"
        )
    gp_v.save(pv)
    gp_t.save(pt)
    print(f"trained on cycle {record.cycle}; artifact version {ledger.version}")
    return 0


def cmd_identify(args):
    problem, opts = scn.load_problem(args.problem)
    budget = args.budget if args.budget is not None else opts.get("budget", 2000)
    theta, report = identify(problem, budget=budget, restarts=opts.get("restarts", 3), seed=opts.get("seed", 0),
                             polish_nfev=opts.get("polish_nfev", 600))
    out = _out_dir(args, opts["name"])
    report.save(out / "identification_report.json")
    problem.base.replace(**theta).save(out / "identified.cfg")
    flat = set(report.flat())
    print(f"cost {report.cost0:.4g} -> {report.cost:.4g} in {report.evaluations} evaluations "
          f"({report.elapsed_s:.1f} s, converged={report.converged})")
    for name in report.names:
        truth = opts["truth"][name]
        tag = " (flat)" if name in flat else ""
        print(f"  {name:6s} {theta[name]:.6g}  [{100 * (theta[name] / truth - 1):+.3f}% vs cell file]{tag}")
    return 0


def cmd_verify(args):
    sc = scn.resolve_scenario(args.scenario)
    m = scn.observer_models(sc)
    ss = m.statespace
    pairs = {"voltage": (ss.A1, ss.C1, m.gains.L_V), "thermal": (ss.A2, ss.C2, m.gains.L_T)}
    sweeps = {k: gamma_sweep(*v, DEFAULT_GAMMAS) for k, v in pairs.items()}
    print(f"{'gamma':>10}  {'margin_V':>12}  {'margin_T':>12}")
    for rv, rt in zip(sweeps["voltage"], sweeps["thermal"]):
        print(f"{rv.gamma:10.3e}  {rv.margin:12.5g}  {rt.margin:12.5g}")
    best = {k: best_report(*v, DEFAULT_GAMMAS) for k, v in pairs.items()}
    ok = True
    doc = {"schema": {"name": "verification", "version": 1}, "scenario": sc.name}
    for k, r in best.items():
        d = r.to_dict()
        d.pop("P")
        d["ultimate_bound_per_unit_eta"] = r.ultimate_bound_radius(1.0) if r.passing else None
        doc[k] = d
        ok &= r.passing
        print(f"{k}: best gamma {r.gamma:.3e}, margin {r.margin:.5g}, spectral radius {r.spectral_radius:.6f}, "
              f"{'pass' if r.passing else 'FAIL'}")
    out = _out_dir(args, sc.name, sc.output_dir)
    m.gains.save(out / "gains.json")
    io.write_json(out / "verification.json", doc)
    return 0 if ok else 7


def cmd_campaign(args):
    doc, base_dir = scn.load_campaign(args.campaign)
    summary = scn.run_campaign(doc, base_dir, workers=_workers(args))
    out = _out_dir(args, doc.get("name") or Path(args.campaign).stem)
    io.write_json(out / "summary.json", summary)
    table = scn.format_table(summary)
    io.atomic_write_text(out / "summary.txt", table)
    sys.stdout.write(table)
    return 1 if any(r["status"] != "ok" for r in summary["rows"]) else 0


def cmd_schema_check(args):
    code = 0
    for p in args.paths:
        try:
            kind = scn.schema_check(p)
            print(f"{p}: ok ({kind})")
        except BattFDError as exc:
            print(f"{p}: {exc}")
            code = code or exc.exit_code
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="battfd", description=__doc__.splitlines()[0] if __doc__ else None)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("scenario", help="scenario JSON path or shipped scenario name")
        p.add_argument("--out", help="output directory")
        p.set_defaults(fn=fn)
        return p

    p = scenario_cmd("simulate", cmd_simulate, "simulate one cycle of the synthetic plant")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-fault", action="store_true", help="ignore the scenario's fault")
    p.add_argument("--cycle", type=int, default=0, help="cycle index stored in the record")

    p = scenario_cmd("detect", cmd_detect, "run observers and the decision maker")
    p.add_argument("--record", help="record CSV (default: simulate the scenario's test cycle)")
    p.add_argument("--gp-dir", help="directory holding gp_voltage.json and gp_thermal.json")
    p.add_argument("--thresholds", help="thresholds .cfg (default: the scenario's threshold source)")

    p = scenario_cmd("calibrate", cmd_calibrate, "thresholds from no-fault cycles")
    p.add_argument("--cycles", type=int, help="number of no-fault cycles (seeds first-seed, first-seed+1, ...)")
    p.add_argument("--first-seed", type=int, default=1000)
    p.add_argument("--gp-dir")

    p = scenario_cmd("learn", cmd_learn, "fault-gated uncertainty-model update from one recorded cycle")
    p.add_argument("record")
    p.add_argument("--thresholds")
    p.add_argument("--bootstrap-delta-v", type=float, default=0.25)
    p.add_argument("--bootstrap-delta-t", type=float, default=0.5)

    p = sub.add_parser("identify", help="fit cell parameters to recorded or synthetic data")
    p.add_argument("problem", help="identification problem JSON")
    p.add_argument("--budget", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_identify)

    scenario_cmd("verify", cmd_verify, "Lyapunov check of the scenario's observer gains over a gamma sweep")

    p = sub.add_parser("campaign", help="run a campaign file")
    p.add_argument("campaign")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_campaign)

    p = sub.add_parser("schema-check", help="validate artifacts")
    p.add_argument("paths", nargs="+")
    p.set_defaults(fn=cmd_schema_check)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.fn(args)
    except BattFDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:  # unreadable input or unwritable output
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return ConfigurationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
