"""Ready-made experiments: the mobile/immobile two-phase splitting benchmark,
the layered geothermal run, and order-of-convergence studies."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .grid import build_grid, face_fluxes
from .integrators import Scheme, StepperConfig, cfl_step_cap, matrix_exponential_apply
from .operators import LinearOperator, Role, as_matrix
from .phases import (ModelParams, PhaseState, SourceSpec, assemble_block_operator,
                     heat_weights, phase_totals, source_average, split_block_operator)
from .splitting import (IntervalForcing, SplitConfig, SplitScheme, SplittingDivergenceError,
                        fixed_point_interval, split_step)
from .transport_fv import LimiterConfig, assemble_transport, limited_convection_rhs

# two-species decay rates per heat-source row, in 1/h; 1e-68 is read as zero
DECAY_TABLE = {
    "first": {"AB": 1e-68},
    "second": {"AB": 2e-3, "BNN": 1e-68},
    "third": {"AB": 0.25e-3, "CB": 0.5e-3},
}
DECAY_FLOOR = 1e-30

# refuse dense reference exponentials above this dimension
MAX_REFERENCE_DIM = 2000


class InstabilityError(RuntimeError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


def decay_chain(row: str = "third") -> np.ndarray:
    """Two-species decay matrix for one row of :data:`DECAY_TABLE`.

    The first rate is the parent's own decay feeding the daughter, the
    second (if any) the daughter's own decay. Negligible rates become 0.
    """
    if row not in DECAY_TABLE:
        raise ValueError(f"unknown decay row {row!r}; choose from {sorted(DECAY_TABLE)}")
    rates = [0.0 if r < DECAY_FLOOR else r for r in DECAY_TABLE[row].values()]
    lam1 = rates[0]
    lam2 = rates[1] if len(rates) > 1 else 0.0
    return np.array([[lam1, 0.0], [lam1, lam2]])


# ------------------------------------------------------------------ errors


@dataclass
class ErrorReport:
    """Error table against a reference plus log-log order fits.

    ``rows`` hold ``scheme, k, tau, linf, l2``; ``fits`` map a scheme name to
    ``{"order", "residual", "taus", "monotone"}``; ``flags`` carry named
    boolean observations.
    """
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def add(self, scheme, k, tau, linf, l2):
        if linf < 0 or l2 < 0:
            raise ValueError("errors must be non-negative")
        self.rows.append({"scheme": scheme, "k": k, "tau": tau, "linf": float(linf), "l2": float(l2)})

    def series(self, scheme, key="linf"):
        return [r[key] for r in self.rows if r["scheme"] == scheme]

    def order(self, scheme) -> float:
        fit = self.fits.get(scheme)
        return float("nan") if fit is None else fit["order"]


def fit_order(taus, errors):
    """Least-squares slope of ``log(err)`` against ``log(tau)``.

    Returns ``(slope, residual)``; a sequence that does not decrease
    strictly with tau gets ``(nan, nan)``.
    """
    taus = np.asarray(taus, float)
    errors = np.asarray(errors, float)
    order = np.argsort(taus)[::-1]
    e = errors[order]
    if np.any(e <= 0) or np.any(np.diff(e) >= 0):
        return float("nan"), float("nan")
    x, y = np.log(taus[order]), np.log(e)
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    resid = float(np.sqrt(res[0] / x.size)) if res.size else 0.0
    return float(coef[0]), resid


def _l2(err, weights):
    return float(np.sqrt(np.sum(weights * err ** 2)))


# ------------------------------------------------------------------ two-phase


@dataclass(frozen=True)
class TwoPhaseBenchmark:
    """Mobile and immobile pores, two species in a 1D column.

    The state is ``[c1, c2, c1_im, c2_im]``, each of length ``I``. Defaults
    put a Gaussian pulse of species 1 in the mobile pores.
    """
    I: int = 50
    D: float = 0.0
    v: float = 4e-3
    dx: float = 2.0
    lambda1: float = 0.25e-3
    lambda2: float = 0.5e-3
    g: float = 0.01
    c0: np.ndarray | None = None
    tau: float = 100.0
    n_steps: int = 10
    k_max: int = 6
    inner_dt: float = 5.0
    inner_scheme: str = "trapezoidal"
    initial_iterate: str = "zero"

    def __post_init__(self):
        errors = []
        if self.I < 2:
            errors.append(f"I must be >= 2, got {self.I}")
        for name in ("D", "v", "lambda1", "lambda2", "g"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if not self.dx > 0 or not self.tau > 0 or not self.inner_dt > 0:
            errors.append("dx, tau and inner_dt must be > 0")
        if self.n_steps < 1 or self.k_max < 1:
            errors.append("n_steps and k_max must be >= 1")
        if errors:
            raise ValueError("; ".join(errors))

    def initial_state(self) -> np.ndarray:
        if self.c0 is not None:
            c0 = np.asarray(self.c0, float)
            if c0.shape != (4 * self.I,):
                raise ValueError(f"c0 must have length {4 * self.I}")
            return c0
        x = (np.arange(self.I) + 0.5) * self.dx
        c0 = np.zeros(4 * self.I)
        center, width = 0.3 * self.I * self.dx, 0.08 * self.I * self.dx
        c0[:self.I] = np.exp(-((x - center) / width) ** 2)
        return c0


def build_two_phase_system(bench: TwoPhaseBenchmark):
    """``(full, A1, A2t, A3t)`` with ``A1 + A2t + A3t == full`` entrywise.

    ``A`` is central diffusion plus donor-cell convection on the column
    (zero inflow on the left, outflow on the right); A1 carries the mobile
    transport, A2t the decay blocks, A3t the mobile/immobile exchange.
    """
    I = bench.I
    if I < 2:
        raise ValueError(f"I must be >= 2, got {I}")
    grid = build_grid(I, 1, (0.0, I * bench.dx, 0.0, 1.0), {"left": "dirichlet", "right": "outflow"})
    conv, _ = assemble_transport(grid, face_fluxes(grid, (bench.v, 0.0)), 0.0)
    lap = sp.diags([np.ones(I - 1), -2.0 * np.ones(I), np.ones(I - 1)], [-1, 0, 1])
    A = (bench.D / bench.dx ** 2) * lap + conv.matrix
    Id = sp.identity(I, format="csr")
    L1, L2, G = bench.lambda1 * Id, bench.lambda2 * Id, bench.g * Id
    Z = sp.csr_matrix((I, I))
    A1 = sp.bmat([[A, Z, Z, Z], [Z, A, Z, Z], [Z, Z, Z, Z], [Z, Z, Z, Z]], format="csr")
    A2 = sp.bmat([[-L1, Z, Z, Z], [L1, -L2, Z, Z], [Z, Z, -L1, Z], [Z, Z, L1, -L2]], format="csr")
    A3 = sp.bmat([[-G, Z, G, Z], [Z, -G, Z, G], [G, Z, -G, Z], [Z, G, Z, -G]], format="csr")
    blocks = (I,) * 4
    full = LinearOperator((A1 + A2 + A3).tocsr(), Role.FULL_BLOCK, blocks)
    return (full, LinearOperator(A1, Role.STIFFNESS, blocks),
            LinearOperator(A2, Role.REACTION, blocks),
            LinearOperator(A3, Role.EXCHANGE_IMMOBILE, blocks))


def _reference(full, c0, T):
    if full.dim > MAX_REFERENCE_DIM:
        raise ValueError(f"reference exponential of dimension {full.dim} exceeds {MAX_REFERENCE_DIM}")
    return matrix_exponential_apply(full, c0, T)


def run_two_phase_comparison(bench: TwoPhaseBenchmark) -> ErrorReport:
    """Errors after ``n_steps`` steps of one-side A, one-side B and the
    alternating iterative scheme for k = 1..k_max iterations.

    One-side A re-solves with the transport A1 and treats ``A2t + A3t`` as
    forcing, one-side B the other way round.
    """
    full, A1, A2, A3 = build_two_phase_system(bench)
    B = LinearOperator((A2.matrix + A3.matrix).tocsr(), Role.GENERIC, A2.blocks)
    c0 = bench.initial_state()
    ref = _reference(full, c0, bench.tau * bench.n_steps)
    inner = StepperConfig(bench.inner_scheme, bench.inner_dt)
    weights = np.full(c0.size, bench.dx)
    report = ErrorReport()
    for scheme in (SplitScheme.ONE_SIDE_A, SplitScheme.ONE_SIDE_B, SplitScheme.ITERATIVE):
        for k in range(1, bench.k_max + 1):
            cfg = SplitConfig(scheme, iterations=k, tau=bench.tau, inner=inner,
                              initial_iterate=bench.initial_iterate)
            c = c0.copy()
            for n in range(bench.n_steps):
                c = split_step(A1, B, c, cfg, n * bench.tau)
            err = c - ref
            report.add(scheme.value, k, bench.tau, np.max(np.abs(err)), _l2(err, weights))
    a = report.series("one_side_a")[-1]
    b = report.series("one_side_b")[-1]
    report.flags["one_side_b_best"] = bool(b <= a)
    it = report.series("iterative")
    report.flags["iterative_strictly_decreasing"] = bool(np.all(np.diff(it) < 0))
    return report


# ------------------------------------------------------------------ convergence


@dataclass(frozen=True, eq=False)
class SplitSystem:
    """Linear test problem ``c' = (A1 + A2) c`` on ``[0, T]``."""
    A1: object
    A2: object
    c0: np.ndarray
    T: float = 1.0


def random_stable_pair(n: int = 8, seed: int = 0, T: float = 1.0) -> SplitSystem:
    """Two noncommuting matrices with negative definite symmetric parts."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    Y = rng.standard_normal((n, n))
    S = rng.standard_normal((n, n))
    A1 = -(X @ X.T / n + 0.5 * np.eye(n))
    A2 = -(Y @ Y.T / n + 0.2 * np.eye(n)) + 0.3 * (S - S.T)
    c0 = rng.standard_normal(n)
    return SplitSystem(LinearOperator(sp.csr_matrix(A1)), LinearOperator(sp.csr_matrix(A2)), c0, T)


def _split_error(system, config, tau, mode, ref):
    m = max(1, round(config.tau / config.inner.dt))
    cfg = replace(config, tau=tau, inner=StepperConfig(config.inner.scheme, tau / m))
    c = np.asarray(system.c0, float)
    n = 1 if mode == "local" else int(round(system.T / tau))
    for i in range(n):
        c = split_step(system.A1, system.A2, c, cfg, i * tau)
    err = c - ref
    return float(np.max(np.abs(err))), float(np.sqrt(np.mean(err ** 2)))


def convergence_study(system: SplitSystem, scheme: SplitConfig, tau_grid, mode: str = "global",
                      jobs: int = 1, name: str | None = None) -> ErrorReport:
    """Errors of ``scheme`` for each step in ``tau_grid`` and the fitted order.

    ``mode="global"`` integrates to ``system.T``; ``mode="local"`` takes a
    single step of each size and measures the one-step (consistency) error,
    whose fitted slope is the local order plus one. The ratio
    ``scheme.tau / scheme.inner.dt`` is kept fixed across the sweep.
    """
    taus = [float(t) for t in tau_grid]
    if len(taus) < 3:
        raise ValueError("need at least 3 step sizes")
    for a, b in zip(taus, taus[1:]):
        if not math.isclose(b, a / 2, rel_tol=1e-9):
            raise ValueError(f"step sizes must halve: {a} -> {b}")
    if mode not in ("global", "local"):
        raise ValueError(f"mode must be 'global' or 'local', got {mode!r}")
    full = as_matrix(system.A1) + as_matrix(system.A2)
    refs = [_reference(LinearOperator(full), system.c0, t if mode == "local" else system.T)
            for t in taus]
    if mode == "global":
        for t in taus:
            n = system.T / t
            if abs(n - round(n)) > 1e-9:
                raise ValueError(f"T = {system.T} is not a multiple of tau = {t}")

    args = [(system, scheme, t, mode, r) for t, r in zip(taus, refs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_split_error, *zip(*args)))
    else:
        results = [_split_error(*a) for a in args]

    label = name or scheme.scheme.value
    report = ErrorReport()
    for t, (linf, l2) in zip(taus, results):
        report.add(label, scheme.iterations, t, linf, l2)
    slope, resid = fit_order(taus, [r[0] for r in results])
    report.fits[label] = {"order": slope, "residual": resid, "taus": taus,
                          "monotone": not math.isnan(slope)}
    return report


# ------------------------------------------------------------------ layered run


def default_layers(n_bands: int = 5, d_high: float = 1e-3, d_low: float = 1e-5,
                   y_range=(0.0, 100.0)):
    """Equal horizontal bands with alternating diffusivity, high at the bottom."""
    edges = np.linspace(y_range[0], y_range[1], n_bands + 1)
    return [((float(edges[i]), float(edges[i + 1])), d_high if i % 2 == 0 else d_low)
            for i in range(n_bands)]


@dataclass(frozen=True)
class LayeredScenario:
    """Heat transport through horizontal layers from three point sources.

    ``velocity`` is given in the grid frame (y up), so the downward Darcy
    velocity is ``(0, -4e-3)``. Sources are ``(x, y, species, total,
    duration)`` tuples. ``tau`` defaults to the Courant cap with capacity
    ``phi * R`` when it is not set.
    """
    nx: int = 64
    ny: int = 64
    domain: tuple = (0.0, 100.0, 0.0, 100.0)
    layers: tuple = tuple(default_layers())
    velocity: tuple = (0.0, -4e-3)
    phi: float = 0.333
    g: float = 1e-3
    k_alpha: float = 5e-4
    retardation: float = 1.0
    henry_rate: float = 10.0e-4
    decay: tuple = tuple(map(tuple, decay_chain("third")))
    sources: tuple = ((30.0, 75.0, 0, 2.0e4, 2.0e4),
                      (50.0, 75.0, 0, 2.0e4, 2.0e4),
                      (70.0, 75.0, 0, 2.0e4, 2.0e4))
    n_steps: int = 150
    dt_init: float = 500.0
    cfl_max: float = 1.0
    tau: float | None = None
    err_tol: float = 1e-4
    max_iter: int = 100
    inner_scheme: str = "trapezoidal"
    inner_substeps: int = 1
    limiter: str = "none"
    initial_value: float = 0.0
    boundary: tuple = (("left", "neumann"), ("right", "neumann"),
                       ("top", "neumann"), ("bottom", "outflow"))
    snapshot_steps: tuple = (2, 150)

    def __post_init__(self):
        errors = []
        ys = sorted((float(lo), float(hi)) for (lo, hi), _ in self.layers)
        if not ys:
            errors.append("at least one layer is required")
        else:
            y0, y1 = self.domain[2], self.domain[3]
            if not math.isclose(ys[0][0], y0) or not math.isclose(ys[-1][1], y1):
                errors.append(f"layers must cover [{y0}, {y1}]")
            for (a0, a1), (b0, b1) in zip(ys, ys[1:]):
                if not math.isclose(a1, b0):
                    errors.append(f"layers [{a0}, {a1}] and [{b0}, {b1}] overlap or leave a gap")
            if any(hi <= lo for lo, hi in ys):
                errors.append("layer ranges must have positive height")
        if any(d < 0 for _, d in self.layers):
            errors.append("layer diffusivities must be >= 0")
        if self.n_steps < 1:
            errors.append("n_steps must be >= 1")
        if not self.cfl_max > 0:
            errors.append("cfl_max must be > 0")
        if self.tau is not None and not self.tau > 0:
            errors.append("tau must be > 0")
        if self.inner_substeps < 1:
            errors.append("inner_substeps must be >= 1")
        if self.limiter not in ("none", "minmod"):
            errors.append(f"limiter must be 'none' or 'minmod', got {self.limiter!r}")
        if errors:
            raise ValueError("; ".join(errors))

    def params(self, diffusion=0.0) -> ModelParams:
        dec = np.asarray(self.decay, float)
        return ModelParams(self.phi, self.g, self.k_alpha, dec,
                           (diffusion,) * dec.shape[0], self.retardation)


@dataclass
class LayeredResult:
    grid: object
    params: ModelParams
    tau: float
    snapshots: dict
    series: list
    final: PhaseState
    value_bound: float


def layer_diffusivity(grid, layers) -> np.ndarray:
    """Per-cell diffusivity from the band containing each cell centre."""
    _, yc = grid.cell_centers()
    yc = np.asarray(yc).ravel()
    bands = sorted(layers)
    lows = np.array([lo for (lo, _), _ in bands])
    if yc.min() < lows[0] or yc.max() > bands[-1][0][1]:
        raise ValueError("layers do not cover every cell centre")
    idx = np.searchsorted(lows, yc, side="right") - 1
    return np.array([d for _, d in bands])[idx]


def _quadrature_weights(scheme: Scheme, m: int) -> np.ndarray:
    """Weights over the m+1 inner nodes matching the inner integrator."""
    w = np.zeros(m + 1)
    if scheme is Scheme.EXPLICIT_EULER:
        w[:-1] = 1.0
    elif scheme is Scheme.IMPLICIT_EULER:
        w[1:] = 1.0
    else:
        w[:-1] += 0.5
        w[1:] += 0.5
    return w


def run_layered_scenario(scn: LayeredScenario, on_step=None) -> LayeredResult:
    """March the layered problem with the fixed-point coupling of the phases.

    Each step records the time, Courant number, phase totals, extrema,
    iteration count and the cumulative outflow, decay loss and source input,
    together with the residual of the heat budget
    ``total - total_0 + outflow + decay - input`` relative to the larger of
    the input and the initial total.
    """
    grid = build_grid(scn.nx, scn.ny, scn.domain, dict(scn.boundary))
    D = layer_diffusivity(grid, scn.layers)
    fluxes = face_fluxes(grid, scn.velocity)
    transport, affine = assemble_transport(grid, fluxes, D)
    params = scn.params(D)
    M, I = params.n_species, grid.n_cells
    MI = M * I
    full = assemble_block_operator(grid, params, transport)
    A1t, A2t = split_block_operator(full)

    capacity = params.phi * params.retardation
    tau = scn.tau if scn.tau is not None else min(
        scn.dt_init, cfl_step_cap(fluxes, grid, scn.cfl_max, capacity))
    cfl = fluxes.max_courant(tau, capacity)
    inner = StepperConfig(scn.inner_scheme, tau / scn.inner_substeps)
    config = SplitConfig(SplitScheme.ITERATIVE, tau=tau, inner=inner,
                         err_tol=scn.err_tol, max_iter=scn.max_iter)

    sources = [SourceSpec("point", grid.locate(x, y), int(s), float(q), float(T))
               for x, y, s, q, T in scn.sources]
    scale = np.full(4 * MI, 1.0 / params.phi)
    scale[:MI] /= params.retardation
    bc_term = np.zeros(4 * MI)
    bc_term[:MI] = np.tile(affine, M) / (params.phi * params.retardation)

    w = heat_weights(grid, params)
    out_rate = -(w @ as_matrix(full.meta["transport"]))
    decay_rate = -(w @ as_matrix(full.meta["reaction"]))
    limiter = LimiterConfig(scn.limiter)

    c = np.full(4 * MI, float(scn.initial_value))
    total0 = float(w @ c)
    v_min = grid.cell_volume
    # sources only add heat; with an initial floor and ceiling the values stay
    # within [min(c0, 0), max(c0) + sum q / (phi R_min V)]
    value_bound = float(np.max(c, initial=0.0)) + sum(s.total for s in sources) / (
        params.phi * min(params.retardation, 1.0) * v_min)

    keep = set(scn.snapshot_steps)
    snapshots = {}
    if 0 in keep:
        snapshots[0] = PhaseState.from_vector(c, M, 0.0)
    series = []
    cum = {"outflow": 0.0, "decay": 0.0, "input": 0.0}

    def make_row(n, t, its, res, c):
        totals = phase_totals(grid, params, c)
        total = float(totals.sum())
        ref = max(cum["input"], abs(total0), 1e-300)
        return {
            "step": n, "time": t, "tau": tau, "cfl": cfl, "iterations": its, "residual": res,
            **{f"total_{p}": float(v) for p, v in zip(
                ("mobile", "immobile", "adsorbed", "immobile_adsorbed"), totals)},
            "min": float(c.min()), "max": float(c.max()),
            "cum_outflow": cum["outflow"], "cum_decay": cum["decay"], "cum_input": cum["input"],
            "budget": (total - total0 + cum["outflow"] + cum["decay"] - cum["input"]) / ref,
        }

    series.append(make_row(0, 0.0, 0, 0.0, c))
    m, h = scn.inner_substeps, tau / scn.inner_substeps
    qw = _quadrature_weights(inner.scheme, m) * h

    for n in range(1, scn.n_steps + 1):
        t0, t1 = (n - 1) * tau, n * tau
        q_avg = source_average(grid, sources, t0, t1, M)
        forcing = scale * q_avg + bc_term
        if limiter.kind != "none":
            corr = np.zeros(4 * MI)
            for i in range(M):
                ci = c[i * I:(i + 1) * I]
                hi = limited_convection_rhs(grid, ci, fluxes, limiter)
                lo = limited_convection_rhs(grid, ci, fluxes, LimiterConfig("none"))
                corr[i * I:(i + 1) * I] = (hi - lo) / (params.phi * params.retardation)
            forcing = forcing + corr
        try:
            nodes, its, hist = fixed_point_interval(A1t, A2t, c, t0, t1, config,
                                                    IntervalForcing(lambda a, b, f=forcing: f),
                                                    return_nodes=True)
        except SplittingDivergenceError as exc:
            raise InstabilityError(f"step {n}: {exc}", n) from exc
        c_new = nodes[-1]
        if not np.all(np.isfinite(c_new)):
            raise InstabilityError(f"non-finite values at step {n}", n)
        cum["outflow"] += float(qw @ (nodes @ out_rate))
        cum["decay"] += float(qw @ (nodes @ decay_rate))
        cum["input"] += float(tau * (w @ (scale * q_avg)))
        c = c_new
        row = make_row(n, t1, its, hist[-1], c)
        series.append(row)
        if n in keep:
            snapshots[n] = PhaseState.from_vector(c, M, t1)
        if on_step is not None:
            on_step(row)

    return LayeredResult(grid, params, tau, snapshots, series,
                         PhaseState.from_vector(c, M, scn.n_steps * tau), value_bound)


def row_spread(grid, values) -> np.ndarray:
    """Heat-weighted standard deviation in x of each grid row (nan when empty)."""
    vals = np.clip(np.asarray(values, float).reshape(grid.ny, grid.nx), 0.0, None)
    xc = np.asarray(grid.cell_centers()[0]).reshape(grid.ny, grid.nx)[0]
    mass = vals.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = (vals * xc).sum(axis=1) / mass
        var = (vals * (xc - mu[:, None]) ** 2).sum(axis=1) / mass
    return np.where(mass > 0, np.sqrt(var), np.nan)


def band_spread_growth(grid, values, layers) -> list:
    """Growth of the lateral variance across each layer, top row to bottom row.

    Returns ``[((y0, y1), diffusivity, growth), ...]``; flow is downward, so a
    band's variance growth is its bottom row minus its top row.
    """
    sd = row_spread(grid, values)
    yc = np.asarray(grid.cell_centers()[1]).reshape(grid.ny, grid.nx)[:, 0]
    out = []
    for (lo, hi), d in sorted(layers):
        rows = np.flatnonzero((yc >= lo) & (yc < hi))
        if rows.size < 2:
            continue
        out.append(((lo, hi), d, float(sd[rows[0]] ** 2 - sd[rows[-1]] ** 2)))
    return out
