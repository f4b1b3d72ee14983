"""Command line entry point: optimize, sweep, eval and validate."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bcd import RunError, RunOptions, preset_scenario, run_benchmark, see_of, sweep_period
from .kinematics import check_feasibility, propulsion_energy, trajectory_from_csv, trajectory_to_csv
from .link import pair_secrecy_table, secrecy_report
from .power import power_from_csv, power_to_csv
from .scenario import Scenario, ScenarioError, load_scenario_file
from .scheduling import schedule_from_csv, schedule_to_csv

log = logging.getLogger("seeuav")


def versions() -> dict:
    return {"seeuav": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _scenario(args) -> Scenario:
    if getattr(args, "preset", None):
        return preset_scenario(args.preset, seed=args.seed, period=args.period, slots=args.slots)
    return load_scenario_file(args.scenario)


def _add_source(p: argparse.ArgumentParser, presets: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", help="scenario JSON file")
    if presets:
        g.add_argument("--preset", choices=["A", "B", "C"],
                       help="built-in geometry: A (1 SUAV), B (1 SUAV + 1 JUAV), C (2 SUAVs + 2 JUAVs)")
        p.add_argument("--period", type=float, default=40.0, help="period T in s for --preset (default 40)")
        p.add_argument("--slots", type=int, default=40, help="slot count N for --preset (default 40)")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scheduler", choices=["greedy", "exhaustive"], default="greedy")
    p.add_argument("--seed", type=int, default=0, help="seed for preset geometry (default 0)")
    p.add_argument("--see-units", choices=["bps-per-joule", "bits-per-joule"], default="bps-per-joule")
    p.add_argument("--max-iter", type=int, default=25, help="outer iteration cap (default 25)")
    p.add_argument("--dump-programs", metavar="DIR", help="write every convex program as text")


def _options(args, scheme: str) -> RunOptions:
    return RunOptions(scheme=scheme, scheduler=args.scheduler, max_iter=args.max_iter,
                      see_units=args.see_units, seed=args.seed, dump_dir=args.dump_programs)


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)


def cmd_optimize(args) -> int:
    sc = _scenario(args)
    opts = _options(args, args.scheme)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {"scenario": sc.to_dict(), "options": asdict(opts), "argv": sys.argv[1:]}
    try:
        res = run_benchmark(sc, opts.scheme, opts)
    except RunError as exc:
        doc = {"config": config, "versions": versions(), "status": "failed", "error": str(exc),
               "trace": exc.trace.to_dict()}
        _write(out, "run.json", json.dumps(doc, indent=2))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rep = secrecy_report(res.plan, res.powers, res.schedule, sc)
    table = pair_secrecy_table(res.plan, res.powers, sc)
    doc = {"config": config, "versions": versions(), "status": "ok", "metrics": res.metrics(),
           "trace": res.trace.to_dict(), "feasibility": [asdict(v) for v in check_feasibility(res.plan, sc)]}
    _write(out, "run.json", json.dumps(doc, indent=2))
    _write(out, "trajectory.csv", trajectory_to_csv(res.plan))
    _write(out, "power.csv", power_to_csv(res.powers))
    _write(out, "schedule.csv", schedule_to_csv(res.schedule, table))
    _write(out, "rates.csv", rep.to_csv())
    m = res.metrics()
    print(f"{opts.scheme}: SEE {m['see']:.6g} {m['see_units']}, secrecy sum {m['secrecy_sum_bps']:.6g} bps, "
          f"energy {m['energy_J']:.6g} J, {len(res.trace.records)} iterations ({res.trace.termination})")
    return 0


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    periods = [float(x) for x in args.periods.split(",") if x.strip()]
    schemes = [s.strip().replace("-", "_") for s in args.schemes.split(",") if s.strip()]
    rows = []
    for scheme in schemes:
        rows.extend(sweep_period(sc, periods, scheme, _options(args, scheme), slots=args.slots,
                                 workers=args.workers))
    buf = io.StringIO()
    fields = ["period_s", "scheme", "see", "secrecy_sum_bps", "secrecy_bits", "energy_J", "iterations", "error"]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in asdict(r).items()})
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out, "sweep.csv", buf.getvalue())
        _write(out, "run.json", json.dumps({"config": {"scenario": sc.to_dict(), "periods": periods,
                                                       "schemes": schemes, "slots": args.slots,
                                                       "see_units": args.see_units},
                                            "versions": versions(), "rows": [asdict(r) for r in rows]},
                                           indent=2))
    sys.stdout.write(buf.getvalue())
    return 1 if any(r.error for r in rows) else 0


def _read(path: str) -> str:
    return Path(path).read_text()


def cmd_eval(args) -> int:
    sc = load_scenario_file(args.scenario)
    plan = trajectory_from_csv(_read(args.trajectory), sc.slot_delta)
    powers = power_from_csv(_read(args.power), sc.uav_count, sc.N)
    schedule = schedule_from_csv(_read(args.schedule), sc.K2, sc.M2, sc.N)
    problems = [asdict(v) for v in check_feasibility(plan, sc)]
    problems += [{"constraint": msg} for msg in schedule.violations()]
    try:
        powers.validate(sc, tol=1e-9)
    except ValueError as exc:
        problems.append({"constraint": "power", "detail": str(exc)})
    rep = secrecy_report(plan, powers, schedule, sc)
    energy = propulsion_energy(plan, sc).total
    doc = {"see": see_of(rep.secrecy_sum, energy, sc, args.see_units), "see_units": args.see_units,
           "secrecy_sum_bps": rep.secrecy_sum, "secrecy_bits": rep.secrecy_bits, "energy_J": energy,
           "feasible": not problems, "violations": problems}
    print(json.dumps(doc, indent=2))
    if args.rates:
        Path(args.rates).write_text(rep.to_csv())
    return 0 if not problems else 1


def cmd_validate(args) -> int:
    sc = load_scenario_file(args.scenario)
    plan = trajectory_from_csv(_read(args.trajectory), sc.slot_delta)
    viol = check_feasibility(plan, sc)
    for v in viol:
        print(f"{v.constraint}\tuav={v.uav}\tslot={v.slot}\tmagnitude={v.magnitude:.6g}")
    print("feasible" if not viol else f"{len(viol)} violation(s)")
    return 0 if not viol else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seeuav", description="Secrecy energy efficiency optimization for multi-UAV secure transmission.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-iteration progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run one scheme and write run.json plus CSV outputs")
    _add_source(p)
    p.add_argument("--scheme", choices=["see", "circular", "energy-min", "rate-max"], default="see")
    _add_run_flags(p)
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="run schemes across periods with N held fixed")
    _add_source(p)
    p.add_argument("--periods", required=True, help="comma-separated periods in s, e.g. 40,60,80")
    p.add_argument("--schemes", default="see,circular,energy-min,rate-max")
    _add_run_flags(p)
    p.add_argument("--workers", type=int, default=1, help="parallel processes (default 1)")
    p.add_argument("--out", help="directory for sweep.csv and run.json")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="evaluate given trajectory, power and schedule files")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--power", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--see-units", choices=["bps-per-joule", "bits-per-joule"], default="bps-per-joule")
    p.add_argument("--rates", metavar="CSV", help="also write per-slot rates here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate", help="check a trajectory against the mobility constraints")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trajectory", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
