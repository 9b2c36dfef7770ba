"""Finite-volume semidiscretisation of the mobile-phase convection-diffusion term.

All operators act on cell averages and return ``d c / d t`` contributions,
i.e. fluxes are already divided by the cell volume. Interior assembly is
separate from the boundary treatment (:func:`apply_boundary`); the
interior-only operators correspond to a closed box.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import BoundaryTag, FaceFlux, StructuredGrid
from .operators import LinearOperator, Role


@dataclass(frozen=True)
class LimiterConfig:
    kind: str = "none"  # "none" | "minmod"
    psi_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("none", "minmod"):
            raise ValueError(f"unknown limiter {self.kind!r}")
        lo, hi = self.psi_bounds
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"psi bounds must satisfy 0 <= lo <= hi <= 1, got {self.psi_bounds}")


def _check_same_grid(grid, fluxes):
    if fluxes.grid is not grid and (
        fluxes.interior.size != grid.n_interior_faces
        or fluxes.boundary.size != grid.n_boundary_faces
    ):
        raise ValueError("face fluxes were built on a different grid")


def _cell_field(grid, value, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(grid.n_cells, float(arr))
    arr = arr.ravel()
    if arr.size != grid.n_cells:
        raise ValueError(f"{name} has {arr.size} entries, grid has {grid.n_cells} cells")
    return arr


def _interior_convection(grid, fluxes):
    lo, hi = grid.face_lo, grid.face_hi
    F = fluxes.interior
    V = grid.cell_volume
    pos = F >= 0.0
    donor = np.where(pos, lo, hi)
    recv = np.where(pos, hi, lo)
    mag = np.abs(F) / V
    rows = np.concatenate([donor, recv])
    cols = np.concatenate([donor, donor])
    vals = np.concatenate([-mag, mag])
    n = grid.n_cells
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_convection_upwind(grid: StructuredGrid, fluxes: FaceFlux, bc=None):
    """Donor-cell upwind convection operator and its Dirichlet inflow vector.

    Returns ``(op, affine)`` so that ``dc/dt = op @ c + affine``.
    """
    _check_same_grid(grid, fluxes)
    op = LinearOperator(_interior_convection(grid, fluxes), Role.STIFFNESS)
    return apply_boundary(grid, op, bc, fluxes=fluxes)


def harmonic_face_values(grid: StructuredGrid, cell_values: np.ndarray) -> np.ndarray:
    a = cell_values[grid.face_lo]
    b = cell_values[grid.face_hi]
    s = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.where(s > 0.0, 2.0 * a * b / np.where(s > 0.0, s, 1.0), 0.0)
    return h


def assemble_diffusion(grid: StructuredGrid, diffusion) -> LinearOperator:
    """Two-point flux diffusion on interior faces (zero-Neumann everywhere).

    ``diffusion`` is a scalar or per-cell array; face coefficients are the
    harmonic mean of the two neighbouring cells.
    """
    D = _cell_field(grid, diffusion, "diffusion")
    if np.any(D < 0):
        raise ValueError("diffusion coefficient must be non-negative")
    Df = harmonic_face_values(grid, D)
    t = grid.face_area * Df / grid.face_dist / grid.cell_volume
    lo, hi = grid.face_lo, grid.face_hi
    rows = np.concatenate([lo, lo, hi, hi])
    cols = np.concatenate([lo, hi, hi, lo])
    vals = np.concatenate([-t, t, -t, t])
    n = grid.n_cells
    return LinearOperator(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)), Role.STIFFNESS)


def _boundary_values(grid, bc):
    """Per-boundary-face Dirichlet values, validated against the tags."""
    values = np.zeros(grid.n_boundary_faces)
    for side, val in (bc or {}).items():
        if grid.boundary_tags.get(side) is not BoundaryTag.DIRICHLET:
            raise ValueError(f"boundary value supplied on non-Dirichlet side {side!r}")
        faces = grid.side_faces(side)
        arr = np.asarray(val, dtype=float)
        if arr.ndim == 0:
            arr = np.full(faces.size, float(arr))
        if arr.shape != (faces.size,):
            raise ValueError(f"side {side!r} needs {faces.size} values, got shape {arr.shape}")
        values[faces] = arr
    return values


def apply_boundary(grid: StructuredGrid, op: LinearOperator, bc=None, fluxes=None, diffusion=None):
    """Add boundary-face contributions to an interior operator.

    Convective boundary fluxes are added when ``fluxes`` is given, diffusive
    ones when ``diffusion`` is given; call once per term. Dirichlet faces
    feed the returned affine vector, outflow and zero-Neumann faces take the
    donor cell value for convection and carry no diffusive flux.
    """
    values = _boundary_values(grid, bc)
    n = grid.n_cells
    V = grid.cell_volume
    cells = grid.bface_cell
    dirichlet = np.isin(grid.bface_side,
                        [s for s, t in grid.boundary_tags.items() if t is BoundaryTag.DIRICHLET])
    diag = np.zeros(grid.n_boundary_faces)
    affine = np.zeros(n)

    if fluxes is not None:
        _check_same_grid(grid, fluxes)
        Fb = fluxes.boundary / V
        out = Fb > 0.0
        diag -= np.where(out, Fb, 0.0)
        inflow = ~out & (Fb < 0.0)
        # inflow through a Dirichlet face carries the prescribed value,
        # elsewhere the zero-gradient ghost value c_j
        np.add.at(affine, cells[inflow & dirichlet], -Fb[inflow & dirichlet] * values[inflow & dirichlet])
        diag -= np.where(inflow & ~dirichlet, Fb, 0.0)

    if diffusion is not None:
        D = _cell_field(grid, diffusion, "diffusion")
        if np.any(D < 0):
            raise ValueError("diffusion coefficient must be non-negative")
        t = np.where(dirichlet, grid.bface_area * D[cells] / grid.bface_dist / V, 0.0)
        diag -= t
        np.add.at(affine, cells, t * values)

    extra = sp.csr_matrix((diag, (cells, cells)), shape=(n, n))
    return LinearOperator(op.matrix + extra, op.role, op.blocks, dict(op.meta)), affine


def assemble_transport(grid: StructuredGrid, fluxes: FaceFlux | None, diffusion=0.0, bc=None):
    """Convection plus diffusion with all boundary terms: ``(op, affine)``."""
    A = assemble_diffusion(grid, diffusion)
    A, affine = apply_boundary(grid, A, bc, diffusion=diffusion)
    if fluxes is not None:
        conv, aff_c = assemble_convection_upwind(grid, fluxes, bc)
        A = LinearOperator(A.matrix + conv.matrix, Role.STIFFNESS)
        affine = affine + aff_c
    return A, affine


@dataclass(frozen=True)
class FaceReconstruction:
    """Reconstructed values on interior faces, seen from either side."""
    from_lo: np.ndarray
    from_hi: np.ndarray
    psi: np.ndarray

    def upwind(self, fluxes: FaceFlux) -> np.ndarray:
        return np.where(fluxes.interior >= 0.0, self.from_lo, self.from_hi)


def _minmod(a, b):
    return np.where(a * b > 0.0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def reconstruct_limited(grid: StructuredGrid, c, limiter: LimiterConfig = LimiterConfig("minmod")):
    """Limited linear reconstruction ``u_jk = c_j + psi_j grad_j . (x_jk - x_j)``.

    The gradient is the central difference; ``psi_j`` is the largest factor
    for which every axis slope stays within the minmod slope, so face values
    never leave the range of the donor cell and its neighbours. Cells on the
    boundary of an axis fall back to ``psi = 0``.
    """
    c = _cell_field(grid, c, "state")
    nx, ny = grid.nx, grid.ny
    C = c.reshape(ny, nx)
    if limiter.kind == "none":
        zero = np.zeros(grid.n_cells)
        return FaceReconstruction(c[grid.face_lo], c[grid.face_hi], zero)

    grads = []
    psi = np.ones((ny, nx))
    for axis, h in ((1, grid.dx), (0, grid.dy)):
        # work along axis 0 of a transposed view
        Ca = np.moveaxis(C, axis, 0)
        g = np.zeros_like(Ca)
        p_ax = np.zeros_like(Ca)
        if Ca.shape[0] == 1:
            grads.append(np.moveaxis(g, 0, axis))
            continue
        if Ca.shape[0] >= 3:
            left = (Ca[1:-1] - Ca[:-2]) / h
            right = (Ca[2:] - Ca[1:-1]) / h
            central = 0.5 * (left + right)
            s = _minmod(left, right)
            nz = central != 0.0
            g[1:-1] = central
            # zero central slope: flat data keeps psi = 1, an extremum gets 0
            flat = (left == 0.0) & (right == 0.0)
            p_ax[1:-1] = np.where(nz, s / np.where(nz, central, 1.0), np.where(flat, 1.0, 0.0))
        psi = np.minimum(psi, np.moveaxis(p_ax, 0, axis))
        grads.append(np.moveaxis(g, 0, axis))

    psi = np.clip(psi, *limiter.psi_bounds).ravel()
    gx, gy = grads[0].ravel(), grads[1].ravel()
    lo, hi, ax = grid.face_lo, grid.face_hi, grid.face_axis
    g_lo = np.where(ax == 0, gx[lo], gy[lo])
    g_hi = np.where(ax == 0, gx[hi], gy[hi])
    half = 0.5 * grid.face_dist
    from_lo = c[lo] + psi[lo] * g_lo * half
    from_hi = c[hi] - psi[hi] * g_hi * half
    return FaceReconstruction(from_lo, from_hi, psi)


def limited_convection_rhs(grid: StructuredGrid, c, fluxes: FaceFlux,
                           limiter: LimiterConfig = LimiterConfig("minmod"), bc=None) -> np.ndarray:
    """Explicit convective tendency using reconstructed upwind face values.

    Boundary faces are treated first order, as in :func:`apply_boundary`.
    """
    _check_same_grid(grid, fluxes)
    c = _cell_field(grid, c, "state")
    rec = reconstruct_limited(grid, c, limiter)
    face_flux = fluxes.interior * rec.upwind(fluxes)
    rhs = np.zeros(grid.n_cells)
    np.add.at(rhs, grid.face_lo, -face_flux)
    np.add.at(rhs, grid.face_hi, face_flux)
    rhs /= grid.cell_volume
    empty = LinearOperator(sp.csr_matrix((grid.n_cells, grid.n_cells)), Role.STIFFNESS)
    bop, affine = apply_boundary(grid, empty, bc, fluxes=fluxes)
    return rhs + bop.matrix @ c + affine
