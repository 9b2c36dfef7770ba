"""One-step integrators for linear systems ``c' = A c + f(t)`` and a dense
matrix-exponential reference evolver."""
from __future__ import annotations

import enum
import math
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import LinearOperator, as_matrix


class Scheme(str, enum.Enum):
    EXPLICIT_EULER = "explicit_euler"
    IMPLICIT_EULER = "implicit_euler"
    TRAPEZOIDAL = "trapezoidal"
    # exact exponential propagation with linearly interpolated forcing
    EXPONENTIAL = "exponential"

    @classmethod
    def parse(cls, value) -> "Scheme":
        aliases = {"implicit_trapezoidal": "trapezoidal", "crank_nicolson": "trapezoidal",
                   "cn": "trapezoidal"}
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        return cls(aliases.get(key, key))


class LinearSolveError(RuntimeError):
    pass


class StepControlError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepperConfig:
    scheme: Scheme = Scheme.TRAPEZOIDAL
    dt: float = 1.0
    cfl_max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.cfl_max is not None and not self.cfl_max > 0:
            raise ValueError(f"cfl_max must be > 0, got {self.cfl_max}")


@dataclass(eq=False)
class LinearIVP:
    operator: object
    initial: np.ndarray
    forcing: object = None
    interval: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        n = as_matrix(self.operator).shape[0]
        if self.initial.shape != (n,):
            raise ValueError(f"initial state has shape {self.initial.shape}, operator dimension is {n}")
        if self.forcing is not None and not callable(self.forcing):
            f = np.asarray(self.forcing, dtype=float)
            if f.shape != (n,):
                raise ValueError(f"forcing has shape {f.shape}, operator dimension is {n}")
            self.forcing = f

    @property
    def dim(self) -> int:
        return self.initial.size

    def f(self, t: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.dim)
        if callable(self.forcing):
            return np.asarray(self.forcing(t), dtype=float)
        return self.forcing


# factorizations of (I - coef * A), keyed per operator object
_FACTOR_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _solver(op, coef: float):
    key = op if isinstance(op, LinearOperator) else None
    if key is not None:
        cached = _FACTOR_CACHE.setdefault(key, {}).get(coef)
        if cached is not None:
            return cached
    A = as_matrix(op)
    M = (sp.identity(A.shape[0], format="csc") - coef * A).tocsc()
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise LinearSolveError(f"implicit system I - {coef:g} A is singular: {exc}") from exc
    if key is not None:
        _FACTOR_CACHE[key][coef] = lu.solve
    return lu.solve


def _checked_solve(solve, rhs, t, dt):
    x = solve(rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError(f"implicit step from t={t:g} with dt={dt:g} produced non-finite values")
    return x


def advance(op, c, h: float, f_left, f_right, scheme: Scheme, t: float = 0.0) -> np.ndarray:
    """One step of size ``h`` given the forcing at both ends of the step.

    Explicit Euler uses ``f_left``, implicit Euler ``f_right``, the
    trapezoidal rule and the exponential scheme use both.
    """
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.EXPLICIT_EULER:
        return c + h * (as_matrix(op) @ c + f_left)
    if scheme is Scheme.IMPLICIT_EULER:
        return _checked_solve(_solver(op, h), c + h * f_right, t, h)
    if scheme is Scheme.TRAPEZOIDAL:
        rhs = c + 0.5 * h * (as_matrix(op) @ c) + 0.5 * h * (f_left + f_right)
        return _checked_solve(_solver(op, 0.5 * h), rhs, t, h)
    if scheme is Scheme.EXPONENTIAL:
        E, P1, P2 = exponential_propagators(op, h)
        return E @ c + P1 @ f_left + P2 @ (f_right - f_left)
    raise ValueError(f"unsupported scheme {scheme}")


def step(ivp: LinearIVP, state, t: float, config: StepperConfig) -> np.ndarray:
    """Advance ``state`` from ``t`` to ``t + config.dt``.

    Explicit Euler: ``c + dt (A c + f(t))``; implicit Euler solves
    ``(I - dt A) c' = c + dt f(t + dt)``; the trapezoidal rule solves
    ``(I - dt/2 A) c' = (I + dt/2 A) c + dt/2 (f(t) + f(t + dt))``.
    """
    c = np.asarray(state, dtype=float)
    tau = config.dt
    scheme = config.scheme
    f_left = ivp.f(t) if scheme is not Scheme.IMPLICIT_EULER else None
    f_right = ivp.f(t + tau) if scheme is not Scheme.EXPLICIT_EULER else None
    return advance(ivp.operator, c, tau, f_left, f_right, scheme, t)


def _pade_coefficients(q: int) -> list[float]:
    f = math.factorial
    return [f(2 * q - k) * f(q) / (f(2 * q) * f(k) * f(q - k)) for k in range(q + 1)]


_PADE8 = _pade_coefficients(8)


def matrix_exponential(A) -> np.ndarray:
    """Dense ``exp(A)`` by scaling and squaring with a diagonal [8/8] Pade
    approximant; ``A`` is scaled until its 1-norm is at most 1/2."""
    A = as_matrix(A).toarray() if sp.issparse(A) or isinstance(A, LinearOperator) else np.asarray(A, float)
    A = np.atleast_2d(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix must be square, got {A.shape}")
    norm = np.linalg.norm(A, 1) if n else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = A / (2.0 ** s)
    c = _PADE8
    I = np.eye(n)
    X2 = X @ X
    X4 = X2 @ X2
    X6 = X4 @ X2
    X8 = X4 @ X4
    V = c[0] * I + c[2] * X2 + c[4] * X4 + c[6] * X6 + c[8] * X8
    U = X @ (c[1] * I + c[3] * X2 + c[5] * X4 + c[7] * X6)
    R = sla.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def matrix_exponential_apply(op, v, t: float = 1.0) -> np.ndarray:
    """``exp(t A) v`` via the dense scaling-and-squaring exponential."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    A = as_matrix(op)
    v = np.asarray(v, dtype=float)
    if v.shape[0] != A.shape[0]:
        raise ValueError(f"vector of length {v.shape[0]} does not match operator dimension {A.shape[0]}")
    if t == 0:
        return v.copy()
    return matrix_exponential(t * A.toarray()) @ v


_PROP_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def exponential_propagators(op, h: float):
    """``(exp(hA), h phi1(hA), h phi2(hA))`` from one augmented exponential.

    With these, ``c(h) = E c + P1 f0 + P2 (f1 - f0)`` solves
    ``c' = A c + f`` exactly for forcing linear in time.
    """
    key = op if isinstance(op, LinearOperator) else None
    if key is not None:
        hit = _PROP_CACHE.setdefault(key, {}).get(h)
        if hit is not None:
            return hit
    A = as_matrix(op).toarray()
    n = A.shape[0]
    Z = np.zeros((n, n))
    I = np.eye(n)
    big = np.block([[h * A, I, Z], [Z, Z, I], [Z, Z, Z]])
    ex = matrix_exponential(big)
    out = (ex[:n, :n], h * ex[:n, n:2 * n], h * ex[:n, 2 * n:])
    if key is not None:
        _PROP_CACHE[key][h] = out
    return out


@dataclass
class Trajectory:
    steps: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    courant: list[float] = field(default_factory=list)

    def record(self, n, t, c, cfl=float("nan")):
        self.steps.append(n)
        self.times.append(t)
        self.states.append(np.array(c, copy=True))
        self.courant.append(cfl)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def cfl_step_cap(fluxes, grid, cfl_max: float, capacity=1.0) -> float:
    """Largest step with ``nu_j * dt / (capacity * V_j) <= cfl_max`` in every cell."""
    nu = fluxes.outflow_totals()
    with np.errstate(divide="ignore"):
        caps = np.where(nu > 0, cfl_max * capacity * grid.volumes / np.where(nu > 0, nu, 1.0), np.inf)
    return float(np.min(caps))


def controlled_march(ivp: LinearIVP, config: StepperConfig, fluxes=None, grid=None,
                     n_steps: int = 1, record_steps=None, capacity=1.0) -> Trajectory:
    """March ``n_steps`` steps with the step size capped by the Courant limit.

    ``capacity`` multiplies the cell volume in the Courant number (use the
    porosity when the operator was divided by it). ``record_steps`` selects
    which step indices to keep; by default every step including 0.
    """
    tau = config.dt
    if config.cfl_max is not None:
        if fluxes is None or grid is None:
            raise ValueError("cfl_max requires fluxes and grid")
        tau = min(tau, cfl_step_cap(fluxes, grid, config.cfl_max, capacity))
    horizon = ivp.interval[1] - ivp.interval[0]
    if horizon <= 0:
        horizon = n_steps * config.dt
    if tau < 1e-12 * horizon:
        raise StepControlError(f"controlled step {tau:g} underflows 1e-12 * T = {1e-12 * horizon:g}")
    cfg = StepperConfig(config.scheme, tau, config.cfl_max)
    cfl = fluxes.max_courant(tau, capacity) if fluxes is not None else float("nan")

    keep = None if record_steps is None else set(record_steps)
    traj = Trajectory()
    t = ivp.interval[0]
    c = ivp.initial.copy()
    if keep is None or 0 in keep:
        traj.record(0, t, c, cfl)
    for n in range(1, n_steps + 1):
        c = step(ivp, c, t, cfg)
        t += tau
        if not np.all(np.isfinite(c)):
            raise LinearSolveError(f"non-finite state after step {n}")
        if keep is None or n in keep:
            traj.record(n, t, c, cfl)
    return traj


def integrate(ivp: LinearIVP, config: StepperConfig, n_steps: int) -> np.ndarray:
    """Final state after ``n_steps`` fixed steps from ``ivp.interval[0]``."""
    c = ivp.initial.copy()
    t = ivp.interval[0]
    for _ in range(n_steps):
        c = step(ivp, c, t, config)
        t += config.dt
    return c
