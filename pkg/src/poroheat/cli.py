"""Command line entry point: ``poroheat simulate | benchmark | study``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, bundled_config, emit_config, parse_config, validate
from .integrators import LinearSolveError, StepControlError, StepperConfig
from .phases import PHASES
from .scenarios import (ErrorReport, InstabilityError, LayeredScenario, TwoPhaseBenchmark,
                        convergence_study, decay_chain, random_stable_pair, run_layered_scenario,
                        run_two_phase_comparison)
from .splitting import SplitConfig, SplittingDivergenceError

OUTPUT_ROOT_ENV = "POROHEAT_OUTPUT_ROOT"

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def layered_from_config(cfg: RunConfig, snapshot_steps=None) -> LayeredScenario:
    g, m, s = cfg.grid, cfg.model, cfg.split
    decay = m["decay"] if m["decay"] is not None else decay_chain(m["decay_row"]).tolist()
    steps = cfg.output["snapshot_steps"] if snapshot_steps is None else snapshot_steps
    return LayeredScenario(
        nx=g["nx"], ny=g["ny"], domain=tuple(g["domain"]),
        layers=tuple((tuple(b["y"]), b["diffusion"]) for b in m["layers"]),
        velocity=tuple(m["velocity"]), phi=m["phi"], g=m["g"], k_alpha=m["k_alpha"],
        retardation=m["retardation"], henry_rate=m["henry_rate"],
        decay=tuple(map(tuple, decay)),
        sources=tuple((q["x"], q["y"], q["species"], q["total"], q["duration"]) for q in cfg.sources),
        n_steps=s["n_steps"], dt_init=s["dt_init"], cfl_max=s["cfl_max"], tau=s["tau"],
        err_tol=s["err_tol"], max_iter=s["max_iter"], inner_scheme=s["inner_scheme"],
        inner_substeps=s["inner_substeps"], limiter=s["limiter"], initial_value=m["initial_value"],
        boundary=tuple(g["boundary"].items()), snapshot_steps=tuple(steps))


def benchmark_from_config(cfg: RunConfig) -> TwoPhaseBenchmark:
    return TwoPhaseBenchmark(**cfg.benchmark)


def _resolve_out(cfg: RunConfig, out=None) -> Path:
    path = Path(out if out is not None else cfg.output["dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _write_errors(out: Path, report):
    rows = []
    for r in report.rows:
        fit = report.fits.get(r["scheme"])
        rows.append([r["scheme"], r["k"], r["tau"], r["linf"], r["l2"],
                     fit["order"] if fit else float("nan")])
    write_csv(out / "errors.csv", ["scheme", "k", "tau", "linf", "l2", "order"], rows)


def _write_snapshot(out: Path, grid, state, step):
    xc, yc = (np.asarray(a).ravel() for a in grid.cell_centers())
    rows = []
    for p in PHASES:
        block = getattr(state, p)
        for i in range(block.shape[0]):
            for j in range(grid.n_cells):
                rows.append([xc[j], yc[j], i, p, block[i, j]])
    write_csv(out / f"snapshot_{step}.csv", ["x", "y", "species", "phase", "value"], rows)


def _run_layered(cfg, out, snapshot_steps, log):
    scn = layered_from_config(cfg, snapshot_steps)
    res = run_layered_scenario(scn)
    header = list(res.series[0])
    write_csv(out / "series.csv", header, [[r[k] for k in header] for r in res.series])
    for step, state in sorted(res.snapshots.items()):
        _write_snapshot(out, res.grid, state, step)
    last = res.series[-1]
    log(f"layered: {scn.n_steps} steps of tau={res.tau:.6g}, CFL={last['cfl']:.3f}, "
        f"max={last['max']:.6g}, budget residual={last['budget']:.2e}")
    return {"tau": res.tau, "steps": scn.n_steps, "snapshots": sorted(res.snapshots),
            "max": last["max"], "min": last["min"], "value_bound": res.value_bound,
            "max_budget_residual": max(abs(r["budget"]) for r in res.series)}


def _run_two_phase(cfg, out, log):
    bench = benchmark_from_config(cfg)
    report = run_two_phase_comparison(bench)
    _write_errors(out, report)
    for name in ("one_side_a", "one_side_b", "iterative"):
        log(f"{name:>11}: " + " ".join(f"{e:.2e}" for e in report.series(name)))
    log(f"one-side B at least as accurate as one-side A: {report.flags['one_side_b_best']}")
    return {"flags": report.flags}


def _run_convergence(cfg, out, jobs, log):
    st = cfg.study
    system = random_stable_pair(st["size"], st["seed"], st["T"])
    fits = {}
    merged = ErrorReport()
    for case in st["cases"]:
        q = case.get("iterations", 1)
        name = case.get("name") or (case["scheme"] if case["scheme"] in ("unsplit", "additive_sigma")
                                    else f"{case['scheme']}_q{q}")
        sc = SplitConfig(case["scheme"], sigma=case.get("sigma", 0.5), iterations=q, tau=st["taus"][0],
                         inner=StepperConfig(st["inner_scheme"], st["taus"][0]),
                         initial_iterate=case.get("initial_iterate", "zero"))
        rep = convergence_study(system, sc, st["taus"], mode=st["mode"], jobs=jobs, name=name)
        merged.rows.extend(rep.rows)
        merged.fits.update(rep.fits)
        log(f"{name:>14}: order {rep.fits[name]['order']:.3f}")
        fits[name] = rep.fits[name]["order"]
    _write_errors(out, merged)
    return {"orders": fits}


def run(cfg: RunConfig, out=None, jobs: int = 1, snapshot_steps=None, log=print) -> int:
    """Run one configuration and write its artifacts; returns the exit status."""
    out_dir = _resolve_out(cfg, out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        log(f"error: output directory {out_dir} is not writable: {exc.strerror}")
        return EXIT_CONFIG

    t0 = time.perf_counter()
    manifest = {"config": cfg.to_dict(), "status": "ok",
                "versions": {"poroheat": __version__, "numpy": np.__version__,
                             "scipy": scipy.__version__, "python": platform.python_version()}}
    status = EXIT_OK
    try:
        if cfg.scenario in ("layered", "custom"):
            manifest["summary"] = _run_layered(cfg, out_dir, snapshot_steps, log)
        elif cfg.scenario == "two_phase":
            manifest["summary"] = _run_two_phase(cfg, out_dir, log)
        else:
            manifest["summary"] = _run_convergence(cfg, out_dir, jobs, log)
    except (InstabilityError, SplittingDivergenceError, LinearSolveError, StepControlError) as exc:
        log(f"error: {exc}")
        manifest["status"] = "diverged"
        manifest["error"] = str(exc)
        if isinstance(exc, InstabilityError):
            manifest["failed_step"] = exc.step
        status = EXIT_DIVERGED
    except ValueError as exc:
        log(f"error: {exc}")
        manifest["status"] = "invalid"
        manifest["error"] = str(exc)
        status = EXIT_CONFIG
    manifest["wall_time_s"] = time.perf_counter() - t0
    with open(out_dir / "run.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return status


def _steps_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated step indices, got {text!r}")


def _load(path):
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = bundled_config(path)
    return parse_config(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poroheat", description="Multiphase heat transport in layered porous media.")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a configuration file (or a bundled config name)")
    sim.add_argument("config")
    sim.add_argument("--out")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--snapshot-steps", type=_steps_list)

    bench = sub.add_parser("benchmark", help="built-in benchmarks")
    bench.add_argument("name", choices=["two-phase"])
    bench.add_argument("--size", type=int)
    bench.add_argument("--tau", type=float)
    bench.add_argument("--kmax", type=int)
    bench.add_argument("--out")

    study = sub.add_parser("study", help="order-of-convergence studies")
    study.add_argument("name", choices=["convergence"])
    study.add_argument("config")
    study.add_argument("--out")
    study.add_argument("--jobs", type=int, default=1)

    sub.add_parser("show-config", help="print a bundled configuration").add_argument("name")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "show-config":
            print(emit_config(parse_config(bundled_config(args.name))), end="")
            return EXIT_OK
        if args.command == "benchmark":
            cfg = parse_config(bundled_config("two_phase"))
            for key, val in (("I", args.size), ("tau", args.tau), ("k_max", args.kmax)):
                if val is not None:
                    cfg.benchmark[key] = val
            cfg = validate(cfg.to_dict())
            return run(cfg, args.out)
        cfg = _load(args.config)
        if args.command == "study" and cfg.scenario != "convergence":
            print(f"error: {args.config} is a {cfg.scenario!r} config, not a convergence study",
                  file=sys.stderr)
            return EXIT_CONFIG
        if args.jobs < 1:
            print("error: --jobs must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        return run(cfg, args.out, args.jobs, getattr(args, "snapshot_steps", None))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
