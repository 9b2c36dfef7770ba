"""Acceptance checks. Each test prints one PASS/FAIL line with its measurements."""
import csv
import json
import time

import numpy as np
import pytest

from poroheat.cli import EXIT_OK, run
from poroheat.config import bundled_config, parse_config
from poroheat.flow import check_divergence_free, constant_field, streamfunction_field
from poroheat.grid import build_grid, face_fluxes
from poroheat.integrators import (LinearIVP, StepperConfig, cfl_step_cap, integrate,
                                  matrix_exponential_apply)
from poroheat.phases import (ModelParams, SourceSpec, assemble_block_operator, heat_weights,
                             source_average, split_block_operator)
from poroheat.scenarios import (TwoPhaseBenchmark, convergence_study, fit_order,
                                random_stable_pair, run_two_phase_comparison)
from poroheat.splitting import SplitConfig, additive_sigma_step, algorithm1_march
from poroheat.transport_fv import assemble_convection_upwind, assemble_transport


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] #{number} {title}: {detail}")
        assert ok, detail
    return emit


def test_01_trapezoidal_order(report):
    t0 = time.perf_counter()
    taus = [0.1 / 2 ** k for k in range(5)]
    A = np.array([[-2.0]])
    exact = np.exp(-2.0)
    errs = [abs(integrate(LinearIVP(A, [1.0]), StepperConfig("trapezoidal", tau), round(1 / tau))[0]
                - exact) for tau in taus]
    slope, _ = fit_order(taus, errs)
    elapsed = time.perf_counter() - t0
    report(1, "trapezoidal order", abs(slope - 2.0) <= 0.1 and elapsed < 1.0,
           f"slope {slope:.3f} over 4 halvings, {elapsed:.2f}s")


def test_02_iterative_splitting_order(report):
    t0 = time.perf_counter()
    system = random_stable_pair(8, seed=0, T=1.0)
    taus = [0.2, 0.1, 0.05, 0.025, 0.0125]
    orders = {}
    for mode, start in (("local", "zero"), ("global", "frozen")):
        for q in (1, 2, 3):
            cfg = SplitConfig("iterative", iterations=q, tau=taus[0],
                              inner=StepperConfig("trapezoidal", taus[0]), initial_iterate=start)
            orders[mode, q] = convergence_study(system, cfg, taus, mode=mode).order("iterative")
    elapsed = time.perf_counter() - t0
    need = {1: 0.7, 2: 1.7, 3: 1.7}
    ok = all(orders[key] >= need[key[1]] for key in orders) and elapsed < 5.0
    detail = ", ".join(f"{m}/q={q}: {o:.2f}" for (m, q), o in orders.items())
    report(2, "iterative splitting order", ok, f"{detail}; {elapsed:.2f}s")


def test_03_sigma_scheme_stability(report):
    t0 = time.perf_counter()
    n, tau, steps = 50, 10.0, 1000
    stable, blew_up = True, True
    for seed in range(3):
        X = np.random.default_rng(seed).standard_normal((n, n))
        A = -(X @ X.T / n + 0.1 * np.eye(n))
        u0 = np.random.default_rng(seed + 100).standard_normal(n)
        for sigma in (0.5, 1.0):
            cfg = SplitConfig("additive_sigma", sigma=sigma, tau=tau)
            u, norms = u0.copy(), [np.linalg.norm(u0)]
            for _ in range(steps):
                u = additive_sigma_step(None, A, None, u, cfg)
                norms.append(np.linalg.norm(u))
            stable &= bool(np.all(np.diff(norms) <= 0.0))
        u = u0.copy()
        cfg = SplitConfig("additive_sigma", sigma=0.0, tau=tau)
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(50):
                u = additive_sigma_step(None, A, None, u, cfg)
        blew_up &= not np.isfinite(np.linalg.norm(u)) or np.linalg.norm(u) > 1e10 * np.linalg.norm(u0)
    elapsed = time.perf_counter() - t0
    report(3, "additive sigma stability", stable and blew_up and elapsed < 5.0,
           f"sigma in {{0.5, 1}} non-increasing: {stable}, sigma=0 diverges: {blew_up}, {elapsed:.2f}s")


def test_04_two_phase_benchmark(report):
    t0 = time.perf_counter()
    rep = run_two_phase_comparison(TwoPhaseBenchmark(I=50, g=0.01))
    elapsed = time.perf_counter() - t0
    it = rep.series("iterative")
    a, b = rep.series("one_side_a")[-1], rep.series("one_side_b")[-1]
    info = "PASS" if rep.flags["one_side_b_best"] else "INFO"
    detail = (f"iterative errors {' '.join(f'{e:.2e}' for e in it)}; "
              f"one-side A {a:.2e}, one-side B {b:.2e} [{info}: B <= A]; {elapsed:.2f}s")
    report(4, "two-phase benchmark", rep.flags["iterative_strictly_decreasing"] and elapsed < 30.0,
           detail)


def test_05_closed_box_conservation(report):
    t0 = time.perf_counter()
    grid = build_grid(12, 10, (0, 12, 0, 10))
    psi = np.zeros((11, 13))
    psi[1:-1, 1:-1] = 0.05 * np.random.default_rng(0).standard_normal((9, 11))
    fluxes = face_fluxes(grid, streamfunction_field(grid, psi))
    D = np.where(np.arange(grid.n_cells) // 12 < 5, 1e-2, 1e-4)
    T, affine = assemble_transport(grid, fluxes, D)
    assert not np.any(affine)
    params = ModelParams(phi=0.333, g=1e-2, k_alpha=5e-3, decay=np.zeros((2, 2)),
                         diffusion=(D, D), retardation=1.5)
    full = assemble_block_operator(grid, params, T)
    c0 = np.random.default_rng(1).uniform(0, 1, full.dim)
    w = heat_weights(grid, params)
    c = integrate(LinearIVP(full, c0), StepperConfig("trapezoidal", 5.0), 100)
    drift = abs(w @ c - w @ c0) / abs(w @ c0)
    elapsed = time.perf_counter() - t0
    report(5, "closed-box conservation", drift <= 1e-10 and elapsed < 10.0,
           f"relative drift {drift:.2e} over 100 steps, {elapsed:.2f}s")


def test_06_max_principle(report):
    t0 = time.perf_counter()
    grid = build_grid(24, 20, (0, 24, 0, 20))
    psi = np.zeros((21, 25))
    psi[1:-1, 1:-1] = np.random.default_rng(2).standard_normal((19, 23))
    fluxes = face_fluxes(grid, streamfunction_field(grid, psi))
    op, affine = assemble_convection_upwind(grid, fluxes)
    dt = cfl_step_cap(fluxes, grid, 1.0)
    c = np.random.default_rng(3).uniform(0, 1, grid.n_cells)
    lo, hi = c.min(), c.max()
    excess = 0.0
    for _ in range(500):
        c = c + dt * (op @ c + affine)
        excess = max(excess, c.max() - hi, lo - c.min())
    elapsed = time.perf_counter() - t0
    report(6, "discrete max principle", excess <= 1e-12 and elapsed < 5.0,
           f"max over/undershoot {max(excess, 0.0):.2e} at CFL "
           f"{fluxes.max_courant(dt):.3f}, {elapsed:.2f}s")


def test_07_source_quadrature(report):
    grid = build_grid(64, 64, (0, 100, 0, 100))
    M = 2
    sources = [SourceSpec("point", grid.locate(x, 75.0), 0, 2e4, 2e4) for x in (30.0, 50.0, 70.0)]
    sources += [SourceSpec("point", grid.locate(10.0, 10.0), 1, 3.5, 777.7),
                SourceSpec("area", [0, 1, 64, 65, 130], 1, 12.25, 1e3)]
    vol = np.tile(grid.volumes, 4 * M)
    worst = 0.0
    for tau, n in ((130.078125, 160), (333.0, 7), (37.1, 40)):
        edges = np.arange(n + 1) * tau
        for src in sources:
            total = sum((b - a) * (vol @ source_average(grid, [src], a, b, M))
                        for a, b in zip(edges, edges[1:]))
            expected = src.total * min(1.0, edges[-1] / src.duration)
            worst = max(worst, abs(total - expected) / src.total)
    report(7, "source quadrature", worst <= 1e-12, f"worst relative error {worst:.2e}")


def test_08_layered_scenario(report, tmp_path):
    t0 = time.perf_counter()
    cfg = parse_config(bundled_config("layered_default"))
    lines = []
    status = run(cfg, tmp_path, log=lines.append)
    elapsed = time.perf_counter() - t0
    rows = list(csv.DictReader(open(tmp_path / "series.csv")))
    snaps = sorted(p.name for p in tmp_path.glob("snapshot_*.csv"))
    summary = json.load(open(tmp_path / "run.json"))["summary"]
    values = [float(r[k]) for r in rows for k in r if k != "step"]
    finite = all(np.isfinite(values))
    vmax = max(float(r["max"]) for r in rows)
    vmin = min(float(r["min"]) for r in rows)
    budget = max(abs(float(r["budget"])) for r in rows)
    # values start at zero and only sources add heat; negatives are bounded by
    # the fixed-point residual tolerance
    bounded = vmax <= summary["value_bound"] and vmin >= -cfg.split["err_tol"]
    ok = (status == EXIT_OK and len(rows) == 151 and finite and bounded and budget <= 1e-8
          and snaps == ["snapshot_150.csv", "snapshot_2.csv"] and elapsed < 60.0)
    report(8, "layered scenario", ok,
           f"{len(rows) - 1} steps, tau {summary['tau']:.3f}, values in [{vmin:.2e}, {vmax:.4g}] "
           f"(bound {summary['value_bound']:.4g}), budget {budget:.2e}, snapshots {snaps}, "
           f"{elapsed:.1f}s")


def test_09_algorithm1_oracle(report):
    t0 = time.perf_counter()
    grid = build_grid(4, 1, (0, 4, 0, 1), {"right": "outflow"})
    params = ModelParams(phi=0.5, g=0.5, k_alpha=0.2, decay=[[0.1, 0.0], [0.1, 0.2]],
                         diffusion=(0.1, 0.1))
    T, _ = assemble_transport(grid, face_fluxes(grid, (0.3, 0.0)), 0.1)
    full = assemble_block_operator(grid, params, T)
    A1, A2 = split_block_operator(full)
    c0 = np.random.default_rng(0).uniform(0, 1, full.dim)
    tau = 0.1
    cfg = SplitConfig(tau=tau, err_tol=1e-12, inner=StepperConfig("exponential", tau / 512))
    res = algorithm1_march(A1, A2, None, c0, np.linspace(0.0, 1.0, 11), cfg)
    err = np.max(np.abs(np.asarray(res.final) - matrix_exponential_apply(full, c0, 1.0)))
    elapsed = time.perf_counter() - t0
    report(9, "fixed-point march vs matrix exponential", err <= 1e-8 and elapsed < 5.0,
           f"final Linf error {err:.2e}, {elapsed:.2f}s")


def test_10_flux_antisymmetry_and_divergence(report):
    worst_pair, worst_div = 0.0, 0.0
    rng = np.random.default_rng(4)
    for nx, ny in ((1, 1), (3, 7), (16, 9), (64, 64)):
        grid = build_grid(nx, ny, (0, 100, 0, 100))
        for velocity in (rng.standard_normal((ny, nx, 2)), (0.0, -4e-3)):
            f = face_fluxes(grid, velocity)
            lo = np.array([f.seen_from(grid.face_lo[k], k) for k in range(grid.n_interior_faces)])
            hi = np.array([f.seen_from(grid.face_hi[k], k) for k in range(grid.n_interior_faces)])
            if lo.size:
                worst_pair = max(worst_pair, np.max(np.abs(lo + hi)))
        psi = rng.standard_normal((ny + 1, nx + 1))
        worst_div = max(worst_div, check_divergence_free(streamfunction_field(grid, psi), grid))
        worst_div = max(worst_div, check_divergence_free(constant_field(grid, (0.0, -4e-3)), grid))
    report(10, "flux antisymmetry and divergence", worst_pair == 0.0 and worst_div <= 1e-12,
           f"max |F_lo + F_hi| {worst_pair:.1e}, max divergence {worst_div:.2e}")
