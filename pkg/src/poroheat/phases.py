"""Four-phase transport model: mobile, immobile, adsorbed and
immobile-adsorbed temperatures of M species on the grid cells.

Global state vectors are phase-major: ``[mobile, immobile, adsorbed,
immobile_adsorbed]``, each phase species-major over the ``I`` cells, i.e.
entry ``(p * M + i) * I + j`` holds phase ``p``, species ``i``, cell ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import StructuredGrid
from .operators import LinearOperator, Role, as_matrix

PHASES = ("mobile", "immobile", "adsorbed", "immobile_adsorbed")


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Porosity, exchange rates, decay chain and transport coefficients.

    ``decay[i, i]`` is the decay rate of species ``i``; ``decay[i, k]`` for
    ``k != i`` is the rate at which species ``i`` gains from its parent ``k``.
    ``diffusion`` is one entry per species, each a scalar or a per-cell array.
    """
    phi: float = 1.0
    g: float = 0.0
    k_alpha: float = 0.0
    decay: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    diffusion: tuple = (0.0,)
    retardation: float = 1.0

    def __post_init__(self):
        decay = np.atleast_2d(np.asarray(self.decay, dtype=float))
        object.__setattr__(self, "decay", decay)
        diff = self.diffusion
        if np.ndim(diff) == 0:
            diff = (float(diff),) * decay.shape[0]
        object.__setattr__(self, "diffusion", tuple(diff))
        errors = []
        if decay.shape[0] != decay.shape[1]:
            errors.append(f"decay matrix must be square, got {decay.shape}")
        if not 0.0 < self.phi <= 1.0:
            errors.append(f"phi must be in (0, 1], got {self.phi}")
        if self.g < 0:
            errors.append(f"g must be >= 0, got {self.g}")
        if self.k_alpha < 0:
            errors.append(f"k_alpha must be >= 0, got {self.k_alpha}")
        if np.any(np.diag(decay) < 0):
            errors.append("decay rates on the diagonal must be >= 0")
        if not self.retardation > 0:
            errors.append(f"retardation must be > 0, got {self.retardation}")
        if len(self.diffusion) != decay.shape[0]:
            errors.append(f"need one diffusion entry per species ({decay.shape[0]}), "
                          f"got {len(self.diffusion)}")
        elif any(np.any(np.asarray(d) < 0) for d in self.diffusion):
            errors.append("diffusion must be >= 0")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def n_species(self) -> int:
        return self.decay.shape[0]

    def parents(self, i: int) -> list[int]:
        return [k for k in range(self.n_species) if k != i and self.decay[i, k] != 0.0]

    def reaction_matrix(self) -> np.ndarray:
        """M x M matrix acting on species values: own loss and parent gains."""
        L = self.decay.copy()
        np.fill_diagonal(L, -np.diag(self.decay))
        return L


@dataclass
class PhaseState:
    mobile: np.ndarray
    immobile: np.ndarray
    adsorbed: np.ndarray
    immobile_adsorbed: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        blocks = [np.atleast_2d(np.asarray(getattr(self, p), dtype=float)) for p in PHASES]
        shape = blocks[0].shape
        for name, b in zip(PHASES, blocks):
            if b.shape != shape:
                raise ValueError(f"phase {name} has shape {b.shape}, expected {shape}")
            if not np.all(np.isfinite(b)):
                raise ValueError(f"phase {name} contains non-finite values")
            setattr(self, name, b)

    @classmethod
    def zeros(cls, n_species: int, n_cells: int, time: float = 0.0) -> "PhaseState":
        z = lambda: np.zeros((n_species, n_cells))  # noqa: E731
        return cls(z(), z(), z(), z(), time)

    @classmethod
    def from_vector(cls, vec, n_species: int, time: float = 0.0) -> "PhaseState":
        vec = np.asarray(vec, dtype=float)
        blocks = vec.reshape(4, n_species, -1)
        return cls(*(b.copy() for b in blocks), time=time)

    @property
    def shape(self):
        return self.mobile.shape

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, p).ravel() for p in PHASES])


def heat_weights(grid: StructuredGrid, params: ModelParams) -> np.ndarray:
    """Weights turning a state vector into total heat: ``phi * V`` per entry,
    ``phi * R * V`` on the mobile phase."""
    MI = params.n_species * grid.n_cells
    w = np.full(4 * MI, params.phi * grid.cell_volume)
    w[:MI] *= params.retardation
    return w


def phase_totals(grid: StructuredGrid, params: ModelParams, vec) -> np.ndarray:
    """Total heat per phase (length-4 array)."""
    w = heat_weights(grid, params)
    return (w * np.asarray(vec)).reshape(4, -1).sum(axis=1)


def _species_blockdiag(grid, params, transport_op):
    MI = params.n_species * grid.n_cells
    A = as_matrix(transport_op)
    if A.shape == (grid.n_cells, grid.n_cells):
        A = sp.kron(sp.identity(params.n_species), A, format="csr")
    if A.shape != (MI, MI):
        raise ValueError(f"transport operator has shape {A.shape}, expected ({MI}, {MI})")
    return A


def assemble_block_operator(grid: StructuredGrid, params: ModelParams, transport_op) -> LinearOperator:
    """Coupled operator of the four phases.

    ``transport_op`` is the mobile convection-diffusion operator for all
    species (dimension ``M*I``) or for one species (dimension ``I``, then
    shared by all species). Every row is divided by the porosity, the mobile
    row additionally by the retardation factor. The returned operator keeps
    its transport/reaction part and its exchange part in ``meta`` for
    :func:`split_block_operator`.
    """
    I = grid.n_cells
    M = params.n_species
    MI = M * I
    phi, R = params.phi, params.retardation
    A1 = _species_blockdiag(grid, params, transport_op) / phi
    A2 = sp.kron(sp.csr_matrix(params.reaction_matrix()), sp.identity(I), format="csr")
    Id = sp.identity(MI, format="csr")
    B1 = -(params.g / phi) * Id
    B2 = -(params.k_alpha / phi) * Id
    Z = None

    diag = sp.block_diag([(A1 + A2) / R, A2, A2, A2], format="csr")
    ex_im = sp.bmat([
        [B1 / R, -B1 / R, Z, Z],
        [-B1, B1, Z, Z],
        [Z, Z, sp.csr_matrix((MI, MI)), Z],
        [Z, Z, Z, sp.csr_matrix((MI, MI))],
    ], format="csr")
    ex_ad = sp.bmat([
        [B2 / R, Z, -B2 / R, Z],
        [Z, B2, Z, -B2],
        [-B2, Z, B2, Z],
        [Z, -B2, Z, B2],
    ], format="csr")
    exchange = ex_im + ex_ad
    blocks = (MI,) * 4
    full = diag + exchange
    meta = {
        "n_species": M,
        "n_cells": I,
        "transport_reaction": LinearOperator(diag, Role.STIFFNESS, blocks),
        "exchange": LinearOperator(exchange, Role.EXCHANGE_IMMOBILE, blocks),
        "exchange_immobile": LinearOperator(ex_im, Role.EXCHANGE_IMMOBILE, blocks),
        "exchange_sorption": LinearOperator(ex_ad, Role.EXCHANGE_SORPTION, blocks),
        "reaction": LinearOperator(
            sp.block_diag([A2 / R, A2, A2, A2], format="csr"), Role.REACTION, blocks),
        "transport": LinearOperator(
            sp.block_diag([A1 / R, sp.csr_matrix((3 * MI, 3 * MI))], format="csr"),
            Role.STIFFNESS, blocks),
    }
    return LinearOperator(full, Role.FULL_BLOCK, blocks, meta)


def split_block_operator(full: LinearOperator):
    """``(A1_tilde, A2_tilde)``: block-diagonal transport/reaction and exchange."""
    if "transport_reaction" not in full.meta or "exchange" not in full.meta:
        raise ValueError("operator carries no block metadata; build it with assemble_block_operator")
    return full.meta["transport_reaction"], full.meta["exchange"]


@dataclass(frozen=True)
class SourceSpec:
    """Heat source releasing ``total`` uniformly over ``[0, duration]``.

    ``location`` is one cell index (point source) or a sequence of cell
    indices (line/area source).
    """
    kind: str
    location: object
    species: int
    total: float
    duration: float

    def __post_init__(self):
        if self.kind not in ("point", "area"):
            raise ValueError(f"source kind must be 'point' or 'area', got {self.kind!r}")
        if not self.duration > 0:
            raise ValueError(f"source duration must be > 0, got {self.duration}")

    def cells(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.location, dtype=int))


def _source_density(grid, src, n_species):
    cells = src.cells()
    if np.any(cells < 0) or np.any(cells >= grid.n_cells):
        raise IndexError(f"source cells {cells.tolist()} outside grid of {grid.n_cells} cells")
    if not 0 <= src.species < n_species:
        raise IndexError(f"source species {src.species} outside [0, {n_species})")
    area = grid.cell_volume * np.unique(cells).size
    return np.unique(cells), src.total / (src.duration * area)


def source_vector(grid: StructuredGrid, sources, t: float, n_species: int = 1) -> np.ndarray:
    """State-sized vector of source rates per unit volume at time ``t``."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    out = np.zeros(4 * n_species * grid.n_cells)
    for src in sources:
        cells, rate = _source_density(grid, src, n_species)
        if t <= src.duration:
            out[src.species * grid.n_cells + cells] += rate
    return out


def source_average(grid: StructuredGrid, sources, t0: float, t1: float, n_species: int = 1) -> np.ndarray:
    """Exact time average of :func:`source_vector` over ``[t0, t1]``."""
    if not 0 <= t0 < t1:
        raise ValueError(f"need 0 <= t0 < t1, got [{t0}, {t1}]")
    out = np.zeros(4 * n_species * grid.n_cells)
    for src in sources:
        cells, rate = _source_density(grid, src, n_species)
        active = max(0.0, min(t1, src.duration) - min(t0, src.duration))
        out[src.species * grid.n_cells + cells] += rate * active / (t1 - t0)
    return out
