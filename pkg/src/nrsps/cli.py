"""Command-line entry point.

Exit codes: 0 success, 1 invalid configuration or incomplete results,
2 usage errors (bad flags, missing files, malformed arguments).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ch_rri import ideal_allocation_oracle
from .config import RunConfig, default_config, load_config
from .engine import (ConfigError, SchedulerSpec, cell_dirname, default_workers, run_experiment,
                     write_experiment)
from .metrics import fmt

FIGURES = ("te_vs_density", "aoi_vs_density", "pdr_vs_density", "aoi_vs_time", "rri_hist")
_FIGURE_COLUMN = {"te_vs_density": "mean_te_m", "aoi_vs_density": "mean_aoi_ms",
                  "pdr_vs_density": "mean_pdr"}


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise UsageError("empty list")
    return vals


def _load(args) -> RunConfig:
    if args.config is None:
        return default_config()
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def _apply_overrides(run: RunConfig, args) -> RunConfig:
    sim = run.sim
    if getattr(args, "seed", None) is not None:
        sim = replace(sim, master_seed=args.seed)
    if getattr(args, "trials", None) is not None:
        sim = replace(sim, trials=args.trials)
    if getattr(args, "sim_time", None) is not None:
        sim = replace(sim, sim_time=args.sim_time)
    if getattr(args, "density", None) is not None:
        sim = replace(sim, highway=replace(sim.highway, density=args.density))
    if getattr(args, "scheduler", None) is not None:
        try:
            sim = replace(sim, scheduler=SchedulerSpec.parse(args.scheduler))
        except ValueError as exc:
            raise UsageError(str(exc))
    errs = sim.validate()
    if errs:
        raise ConfigError(errs)
    return replace(run, sim=sim)


def _summary_line(cell) -> str:
    parts = []
    for key in ("mean_te_m", "mean_aoi_ms", "mean_pdr"):
        m, _ = cell.stat(key)
        parts.append(f"{key}={fmt(m) if m is not None else 'NA'}")
    return " ".join(parts)


def cmd_run(args) -> int:
    run = _apply_overrides(_load(args), args)
    sim = run.sim
    exp = run_experiment(sim, [sim.highway.density], [sim.scheduler], workers=args.workers)
    out = Path(args.out) / args.exp_id
    write_experiment(exp, out)
    cell = exp.cell(sim.highway.density, sim.scheduler.label)
    if cell.errors:
        print("\n".join(cell.errors), file=sys.stderr)
        return 1
    print(f"density={sim.highway.density:g} scheduler={sim.scheduler.label} trials={len(cell.trials)} "
          + _summary_line(cell))
    print(f"results: {out}")
    return 0


def cmd_sweep(args) -> int:
    run = _apply_overrides(_load(args), args)
    densities = run.densities
    schedulers = run.schedulers
    if args.densities:
        densities = tuple(float(d) for d in _int_list(args.densities))
    if args.schedulers is not None:
        try:
            schedulers = tuple(SchedulerSpec.parse(t) for t in args.schedulers.split(",") if t.strip())
        except ValueError as exc:
            raise UsageError(str(exc))
    if not schedulers:
        raise ConfigError(["sweep needs at least one scheduler"])

    def progress(key, res, err):
        state = "FAILED " + err if err else f"ok ({res.runtime:.1f} s)"
        logging.getLogger("nrsps.sweep").info("%g %s trial: %s", key[0], key[1], state)

    exp = run_experiment(run.sim, densities, schedulers, workers=args.workers, progress=progress)
    out = Path(args.out) / args.exp_id
    write_experiment(exp, out)
    for d in exp.densities:
        for lab in exp.schedulers:
            c = exp.cell(d, lab)
            status = "FAILED" if c.errors else _summary_line(c)
            print(f"density={d:g} scheduler={lab} {status}")
    print(f"results: {out}")
    return 1 if exp.failed else 0


def cmd_oracle(args) -> int:
    clusters = _int_list(args.clusters)
    rris = _int_list(args.rris)
    if any(c <= 0 for c in clusters) or any(r <= 0 for r in rris):
        raise UsageError("cluster sizes and RRIs must be positive")
    if not args.slots_per_ms > 0:
        raise UsageError("--slots-per-ms must be positive")
    rows = ideal_allocation_oracle(clusters, args.slots_per_ms, rris)
    print(f"{'rri':>10} {'occupancy_pct':>14} {'p_suc':>8}")
    for label, occ, ps in rows:
        print(f"{label:>10} {occ:14.4f} {ps:8.5f}")
    return 0


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    res = Path(args.results)
    manifest_path = res / "experiment.json"
    if not manifest_path.is_file():
        print(f"no completed sweep under {res} (experiment.json missing)", file=sys.stderr)
        return 1
    manifest = json.loads(manifest_path.read_text())
    densities, schedulers = manifest["densities"], manifest["schedulers"]
    absent = []
    for d in densities:
        for lab in schedulers:
            cdir = res / cell_dirname(d, lab)
            if not (cdir / "trials.csv").is_file() or cdir.name in manifest.get("failed", []):
                absent.append(cdir.name)
    if absent or not densities or not schedulers:
        print("incomplete results; absent cells: " + (", ".join(absent) or "all"), file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else res
    out.mkdir(parents=True, exist_ok=True)
    fig = args.figure
    written = []
    if fig in _FIGURE_COLUMN:
        col = _FIGURE_COLUMN[fig]
        summary = {(float(r["density"]), r["scheduler"]): r[col] for r in _read_csv(res / "summary.csv")}
        path = out / f"{fig}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["density", *schedulers])
            for d in densities:
                w.writerow([fmt(d), *[summary.get((float(d), lab), "") for lab in schedulers]])
        written.append(path)
    elif fig == "aoi_vs_time":
        for d in densities:
            series = {}
            for lab in schedulers:
                cdir = res / cell_dirname(d, lab)
                runs = [_read_csv(p) for p in sorted(cdir.glob("trial_*.csv"))]
                t = [r["time_ms"] for r in runs[0]]
                for key, suffix in (("aoi_ms", ""), ("aoi_startup_ms", "_startup")):
                    vals = np.array([[float(r[key]) for r in run] for run in runs])
                    with np.errstate(all="ignore"):
                        ok = ~np.isnan(vals)
                        mean = np.where(ok.any(0), np.nansum(vals, 0) / np.maximum(ok.sum(0), 1), np.nan)
                    series[lab + suffix] = mean
            path = out / f"aoi_vs_time_{d:g}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["time_ms", *series])
                for i, ti in enumerate(t):
                    w.writerow([ti, *[fmt(v[i]) for v in series.values()]])
            written.append(path)
    elif fig == "rri_hist":
        for d in densities:
            counts = {}
            for lab in schedulers:
                rows = _read_csv(res / cell_dirname(d, lab) / "rri_hist.csv")
                counts[lab] = {int(r["rri_ms"]): int(r[lab]) for r in rows}
            bins = sorted(set().union(*[c.keys() for c in counts.values()]))
            path = out / f"rri_hist_{d:g}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["rri_ms", *schedulers])
                for b in bins:
                    w.writerow([b, *[counts[lab].get(b, 0) for lab in schedulers]])
            written.append(path)
    for p in written:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nrsps", description="NR-V2X Mode-2 SPS simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI configuration (default: bundled default.cfg)")
        p.add_argument("--seed", type=int, help="override sim.master_seed")
        p.add_argument("--trials", type=int, help="override sim.trials")
        p.add_argument("--sim-time", type=float, help="override sim.sim_time (s)")
        p.add_argument("--out", default="results", help="results root directory")
        p.add_argument("--workers", type=int, default=None,
                       help="parallel processes (default: SIM_THREADS or CPU count)")

    p = sub.add_parser("run", help="run the trials of one configuration")
    common(p)
    p.add_argument("--density", type=float, help="override highway.density (veh/km)")
    p.add_argument("--scheduler", help="override scheduler (staticN, ch_rri, aoi_rri)")
    p.add_argument("--exp-id", default="run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every density x scheduler cell")
    common(p)
    p.add_argument("--densities", help="comma-separated veh/km (default: [sweep] section)")
    p.add_argument("--schedulers", help="comma-separated schedulers (default: [sweep] section)")
    p.add_argument("--exp-id", default="sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="ideal-allocation occupancy / success table")
    p.add_argument("--clusters", required=True, help="comma-separated cluster sizes")
    p.add_argument("--rris", default="20,50,100", help="comma-separated RRIs (ms)")
    p.add_argument("--slots-per-ms", type=float, default=1.0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="plot-ready CSV data from a sweep directory")
    p.add_argument("--results", required=True, help="directory written by sweep")
    p.add_argument("--figure", required=True, choices=FIGURES)
    p.add_argument("--out", help="output directory (default: the results directory)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) is None and hasattr(args, "workers"):
        args.workers = default_workers()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{ap.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
