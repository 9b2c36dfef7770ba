"""Operator splitting: weighted additive scheme, iterative splitting,
one-side iteration and the fixed-point coupling of the phase blocks."""
from __future__ import annotations

import enum
import math
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .integrators import LinearSolveError, Scheme, StepperConfig, advance
from .operators import LinearOperator, as_matrix
from .phases import PhaseState


class SplitScheme(str, enum.Enum):
    ADDITIVE_SIGMA = "additive_sigma"
    ITERATIVE = "iterative"
    ONE_SIDE_A = "one_side_a"
    ONE_SIDE_B = "one_side_b"
    UNSPLIT = "unsplit"


class SplittingDivergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class SplitConfig:
    scheme: SplitScheme = SplitScheme.ITERATIVE
    sigma: float = 0.5
    iterations: int = 2
    err_tol: float = 1e-4
    tau: float = 1.0
    inner: StepperConfig | None = None
    max_iter: int = 100
    # starting iterate c_{-1}: "zero" or "frozen" (constant c^n)
    initial_iterate: str = "zero"

    def __post_init__(self):
        object.__setattr__(self, "scheme", SplitScheme(self.scheme))
        if self.inner is None:
            object.__setattr__(self, "inner", StepperConfig(Scheme.TRAPEZOIDAL, self.tau))
        errors = []
        if not 0.0 <= self.sigma <= 1.0:
            errors.append("sigma must be in [0,1]")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            errors.append("iterations must be an integer >= 1")
        if not self.err_tol > 0:
            errors.append("err_tol must be > 0")
        if not self.tau > 0:
            errors.append("tau must be > 0")
        if self.max_iter < 1:
            errors.append("max_iter must be >= 1")
        if self.initial_iterate not in ("zero", "frozen"):
            errors.append("initial_iterate must be 'zero' or 'frozen'")
        if errors:
            raise ValueError("; ".join(errors))


def _as_op(op) -> LinearOperator:
    return op if isinstance(op, LinearOperator) else LinearOperator(as_matrix(op))


def _forcing_at(f, t, n):
    if f is None:
        return np.zeros(n)
    if callable(f):
        return np.asarray(f(t), dtype=float)
    return np.asarray(f, dtype=float)


# ---------------------------------------------------------------- additive

_SIGMA_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _sigma_solver(B, A, coef):
    cache = _SIGMA_CACHE.setdefault(A, {})
    key = (id(B), coef)
    if key not in cache:
        n = A.dim
        Bm = sp.identity(n, format="csc") if B is None else as_matrix(B).tocsc()
        try:
            cache[key] = (B, spla.splu((Bm - coef * A.matrix).tocsc()).solve)
        except RuntimeError as exc:
            raise LinearSolveError(f"B - {coef:g} A is singular: {exc}") from exc
    return cache[key][1]


def additive_sigma_step(B_mass, A, f, u, config: SplitConfig, t: float = 0.0) -> np.ndarray:
    """Weighted one-step scheme

        B (u' - u) / tau - A (sigma u' + (1 - sigma) u) = f(sigma t' + (1 - sigma) t).

    ``B_mass=None`` means the identity. sigma = 1/2 is the trapezoidal rule,
    sigma = 1 implicit Euler, sigma = 0 explicit Euler.
    """
    A = _as_op(A)
    u = np.asarray(u, dtype=float)
    tau, sigma = config.tau, config.sigma
    phi = _forcing_at(f, t + sigma * tau, u.size)
    Bu = u if B_mass is None else as_matrix(B_mass) @ u
    # same association as the trapezoidal rule, so sigma = 1/2 matches it bitwise
    rhs = Bu + (1.0 - sigma) * tau * (A.matrix @ u) + 0.5 * tau * (phi + phi)
    if sigma == 0.0 and B_mass is None:
        return rhs
    x = _sigma_solver(B_mass, A, sigma * tau)(rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("additive sigma step produced non-finite values")
    return x


def additive_sweep_step(B_mass, A, f, u, config: SplitConfig, blocks, t: float = 0.0) -> np.ndarray:
    """Sigma scheme with only diagonal blocks inverted.

    The block system ``(B - sigma tau A) u' = r`` is swept once forward and
    once backward over the block rows (symmetric Gauss-Seidel), each stage
    solving with ``B_aa - sigma tau A_aa``. With vanishing off-diagonal
    blocks this is exactly :func:`additive_sigma_step`.
    """
    A = _as_op(A)
    u = np.asarray(u, dtype=float)
    n = u.size
    tau, sigma = config.tau, config.sigma
    Bm = sp.identity(n, format="csr") if B_mass is None else as_matrix(B_mass)
    M = (Bm - sigma * tau * A.matrix).tocsr()
    phi = _forcing_at(f, t + sigma * tau, n)
    r = Bm @ u + (1.0 - sigma) * tau * (A.matrix @ u) + tau * phi

    off = np.concatenate([[0], np.cumsum(blocks)])
    if off[-1] != n:
        raise ValueError(f"block sizes {tuple(blocks)} do not add up to {n}")
    sl = [slice(off[a], off[a + 1]) for a in range(len(blocks))]
    diag_solve = [spla.splu(M[s, s].tocsc()).solve for s in sl]

    def sweep(x, order):
        x = x.copy()
        for a in order:
            rest = r[sl[a]] - M[sl[a], :] @ x + M[sl[a], sl[a]] @ x[sl[a]]
            x[sl[a]] = diag_solve[a](rest)
        return x

    half = sweep(u, range(len(blocks)))
    return sweep(half, reversed(range(len(blocks))))


# ---------------------------------------------------------------- iterative


def _substeps(tau, inner):
    m = max(1, int(math.ceil(tau / inner.dt - 1e-9)))
    return m, tau / m


def _solve_subproblem(op, c0, coupling, source, t0, h, m, scheme):
    """Integrate ``x' = op x + coupling_k + source`` over m substeps.

    ``coupling`` holds the frozen-operand term at the m+1 substep nodes.
    Returns the trajectory at the nodes, shape (m+1, n).
    """
    nodes = np.empty((m + 1, c0.size))
    nodes[0] = c0
    x = c0
    for k in range(m):
        tk = t0 + k * h
        fl, fr = source(tk, tk + h)
        x = advance(op, x, h, coupling[k] + fl, coupling[k + 1] + fr, scheme, tk)
        nodes[k + 1] = x
    return nodes


class IntervalForcing:
    """Forcing given by its exact average over each step, held constant in the step."""

    def __init__(self, average):
        self.average = average

    def __call__(self, t0, t1):
        q = np.asarray(self.average(t0, t1), dtype=float)
        return q, q


def _source_fn(forcing, n):
    if forcing is None:
        z = np.zeros(n)
        return lambda t0, t1: (z, z)
    if isinstance(forcing, IntervalForcing):
        return forcing
    if callable(forcing):
        return lambda t0, t1: (np.asarray(forcing(t0), float), np.asarray(forcing(t1), float))
    q = np.asarray(forcing, dtype=float)
    return lambda t0, t1: (q, q)


def _initial_iterate(c_n, m, mode):
    if mode == "frozen":
        return np.repeat(c_n[None, :], m + 1, axis=0)
    return np.zeros((m + 1, c_n.size))


def _iterate(ops, c_n, tau, q, inner, t, forcing, initial):
    c_n = np.asarray(c_n, dtype=float)
    m, h = _substeps(tau, inner)
    src = _source_fn(forcing, c_n.size)
    prev = _initial_iterate(c_n, m, initial)
    for i in range(q):
        implicit, frozen = ops[i]
        coupling = (frozen.matrix @ prev.T).T
        prev = _solve_subproblem(implicit, c_n, coupling, src, t, h, m, inner.scheme)
    return prev[-1]


def iterative_split(A1, A2, c_n, tau: float, q: int, inner: StepperConfig,
                    t: float = 0.0, forcing=None, initial: str = "zero") -> np.ndarray:
    """``q`` alternating sub-problem solves over ``[t, t + tau]``.

    Even solves integrate ``c_i' = A1 c_i + A2 c_{i-1}``, odd solves
    ``c_{i+1}' = A1 c_i + A2 c_{i+1}``, all starting from ``c_n``. The
    frozen operand is taken from the previous iterate at the inner nodes.
    """
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    A1, A2 = _as_op(A1), _as_op(A2)
    ops = [(A1, A2) if i % 2 == 0 else (A2, A1) for i in range(q)]
    return _iterate(ops, c_n, tau, q, inner, t, forcing, initial)


def one_side_split(A1, A2, side: str, c_n, tau: float, q: int, inner: StepperConfig,
                   t: float = 0.0, forcing=None, initial: str = "zero") -> np.ndarray:
    """Iterate on one operator only, keeping the other as forcing.

    ``side="B"`` solves ``c_i' = A2 c_i + A1 c_{i-1}`` q times, ``side="A"``
    solves ``c_i' = A1 c_i + A2 c_{i-1}``.
    """
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    A1, A2 = _as_op(A1), _as_op(A2)
    side = str(side).upper()
    if side not in ("A", "B"):
        raise ValueError(f"side must be 'A' or 'B', got {side!r}")
    pair = (A1, A2) if side == "A" else (A2, A1)
    return _iterate([pair] * q, c_n, tau, q, inner, t, forcing, initial)


def split_step(A1, A2, c_n, config: SplitConfig, t: float = 0.0, forcing=None) -> np.ndarray:
    """One step of size ``config.tau`` with the scheme selected in ``config``."""
    s = config.scheme
    if s is SplitScheme.ITERATIVE:
        return iterative_split(A1, A2, c_n, config.tau, config.iterations, config.inner,
                               t, forcing, config.initial_iterate)
    if s in (SplitScheme.ONE_SIDE_A, SplitScheme.ONE_SIDE_B):
        side = "A" if s is SplitScheme.ONE_SIDE_A else "B"
        return one_side_split(A1, A2, side, c_n, config.tau, config.iterations, config.inner,
                              t, forcing, config.initial_iterate)
    full = _as_op(as_matrix(A1) + as_matrix(A2))
    if s is SplitScheme.ADDITIVE_SIGMA:
        return additive_sigma_step(None, full, forcing, c_n, config, t)
    m, h = _substeps(config.tau, config.inner)
    src = _source_fn(forcing, np.size(c_n))
    zero = np.zeros((m + 1, np.size(c_n)))
    return _solve_subproblem(full, np.asarray(c_n, float), zero, src, t, h, m, config.inner.scheme)[-1]


# ---------------------------------------------------------------- fixed point


@dataclass
class Algorithm1Result:
    times: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    states: list = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    residuals: list[list[float]] = field(default_factory=list)

    @property
    def final(self):
        return self.states[-1]


def fixed_point_interval(A1t, A2t, c_n, t0, t1, config: SplitConfig, forcing=None,
                         return_nodes=False):
    """Fixed-point iteration ``C^k' = A1t C^k + A2t C^{k-1} + Q`` on one interval.

    Returns ``(C(t1), iterations, residual_history)``; the residual is the
    max norm of ``C^k(t1) - C^{k-1}(t1)`` and the first iterate is the
    constant ``C(t0)``. With ``return_nodes`` the first item is instead the
    accepted iterate at all inner nodes, shape (m+1, n).
    """
    A1t, A2t = _as_op(A1t), _as_op(A2t)
    c_n = np.asarray(c_n, dtype=float)
    m, h = _substeps(t1 - t0, config.inner)
    src = _source_fn(forcing, c_n.size)
    prev = np.repeat(c_n[None, :], m + 1, axis=0)
    history = []
    for k in range(1, config.max_iter + 1):
        coupling = (A2t.matrix @ prev.T).T
        cur = _solve_subproblem(A1t, c_n, coupling, src, t0, h, m, config.inner.scheme)
        res = float(np.max(np.abs(cur[-1] - prev[-1]))) if c_n.size else 0.0
        history.append(res)
        if not np.isfinite(res):
            raise SplittingDivergenceError(
                f"fixed-point iteration on [{t0:g}, {t1:g}] produced non-finite values", history)
        if res <= config.err_tol:
            return (cur if return_nodes else cur[-1]), k, history
        prev = cur
    raise SplittingDivergenceError(
        f"fixed-point iteration on [{t0:g}, {t1:g}] did not reach {config.err_tol:g} "
        f"in {config.max_iter} iterations (last residual {history[-1]:.3e})", history)


def algorithm1_march(A1t, A2t, Q, C0, t_grid, config: SplitConfig,
                     record_steps=None, on_step=None) -> Algorithm1Result:
    """March the coupled phase system over the partition ``t_grid``.

    ``Q`` is None, a constant vector, a callable of time or an
    :class:`IntervalForcing`. ``C0`` is a :class:`PhaseState` or a flat
    vector; recorded states have the same type. ``on_step(n, t0, t1, c0, c1,
    iterations)`` is called after every interval.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be a strictly increasing partition")
    as_state = isinstance(C0, PhaseState)
    n_species = C0.shape[0] if as_state else None
    c = C0.to_vector() if as_state else np.asarray(C0, dtype=float)
    keep = None if record_steps is None else set(record_steps)
    out = Algorithm1Result()

    def record(n, t, vec, its, hist):
        if keep is None or n in keep:
            out.steps.append(n)
            out.times.append(float(t))
            out.states.append(PhaseState.from_vector(vec, n_species, float(t)) if as_state else vec.copy())
        out.iterations.append(its)
        out.residuals.append(hist)

    record(0, t_grid[0], c, 0, [])
    A1t, A2t = _as_op(A1t), _as_op(A2t)
    for n in range(1, t_grid.size):
        t0, t1 = t_grid[n - 1], t_grid[n]
        c_new, its, hist = fixed_point_interval(A1t, A2t, c, t0, t1, config, Q)
        if on_step is not None:
            on_step(n, t0, t1, c, c_new, its)
        c = c_new
        record(n, t1, c, its, hist)
    return out
