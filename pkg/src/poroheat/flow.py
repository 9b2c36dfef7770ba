"""Velocity fields on the staggered grid.

``u`` lives on x-normal faces, shape (ny, nx+1); ``v`` on y-normal faces,
shape (ny+1, nx). Cell pressures have shape (ny, nx).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import StructuredGrid


@dataclass(frozen=True, eq=False)
class VelocityField:
    u: np.ndarray
    v: np.ndarray
    kind: str = "staggered"

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.ndim != 2 or v.ndim != 2 or u.shape[0] != v.shape[0] - 1 or u.shape[1] != v.shape[1] + 1:
            raise ValueError(f"incompatible staggered shapes u{u.shape}, v{v.shape}")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def ny(self) -> int:
        return self.u.shape[0]

    @property
    def nx(self) -> int:
        return self.v.shape[1]


def _check(field, grid):
    if not isinstance(field, VelocityField):
        raise TypeError("expected a staggered VelocityField")
    if (field.ny, field.nx) != (grid.ny, grid.nx):
        raise ValueError(f"field is {field.ny}x{field.nx}, grid is {grid.ny}x{grid.nx}")


def constant_field(grid: StructuredGrid, velocity) -> VelocityField:
    vx, vy = map(float, velocity)
    return VelocityField(np.full((grid.ny, grid.nx + 1), vx),
                         np.full((grid.ny + 1, grid.nx), vy), kind="constant")


def streamfunction_field(grid: StructuredGrid, psi) -> VelocityField:
    """Discretely solenoidal field from node values ``psi`` of shape (ny+1, nx+1).

    ``u = d psi / dy``, ``v = -d psi / dx``; cell divergences telescope to
    zero. Zero ``psi`` on the boundary nodes gives a closed box.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (grid.ny + 1, grid.nx + 1):
        raise ValueError(f"psi must have shape {(grid.ny + 1, grid.nx + 1)}, got {psi.shape}")
    u = (psi[1:, :] - psi[:-1, :]) / grid.dy
    v = -(psi[:, 1:] - psi[:, :-1]) / grid.dx
    return VelocityField(u, v)


def cell_divergence(field: VelocityField, grid: StructuredGrid) -> np.ndarray:
    _check(field, grid)
    flux_x = field.u * grid.dy
    flux_y = field.v * grid.dx
    net = (flux_x[:, 1:] - flux_x[:, :-1]) + (flux_y[1:, :] - flux_y[:-1, :])
    return net / grid.cell_volume


def check_divergence_free(field: VelocityField, grid: StructuredGrid) -> float:
    """Largest absolute cell divergence ``|sum of face fluxes| / V_j``."""
    return float(np.max(np.abs(cell_divergence(field, grid))))


def _upwind(vel, left, right):
    return np.where(vel >= 0.0, left, right)


def ns_explicit_euler_step(field: VelocityField, pressure, dt: float, grid: StructuredGrid) -> VelocityField:
    """``v <- v - dt (v . grad) v - dt grad p`` on the staggered grid.

    Momentum convection is the conservative donor-cell flux over each face
    control volume; the pressure gradient is the central difference of the
    neighbouring cells. Boundary-normal components are held fixed, and
    tangential values outside the domain are extrapolated from inside.
    """
    _check(field, grid)
    p = np.asarray(pressure, dtype=float)
    if p.shape != (grid.ny, grid.nx):
        raise ValueError(f"pressure must have shape {(grid.ny, grid.nx)}, got {p.shape}")
    u, v = field.u, field.v
    dx, dy = grid.dx, grid.dy
    u_new = u.copy()
    v_new = v.copy()

    if grid.nx > 1:
        # u control volumes centred on interior x-faces
        uc = 0.5 * (u[:, :-1] + u[:, 1:])                 # normal velocity at cell centres
        fe = uc * _upwind(uc, u[:, :-1], u[:, 1:])          # east/west fluxes at cell centres
        vn = 0.5 * (v[:, :-1] + v[:, 1:])                   # (ny+1, nx-1) at nodes
        ug = np.vstack([u[:1, 1:-1], u[:, 1:-1], u[-1:, 1:-1]])
        fn = vn * _upwind(vn, ug[:-1], ug[1:])
        conv = (fe[:, 1:] - fe[:, :-1]) / dx + (fn[1:] - fn[:-1]) / dy
        u_new[:, 1:-1] = u[:, 1:-1] - dt * conv - dt * (p[:, 1:] - p[:, :-1]) / dx

    if grid.ny > 1:
        vc = 0.5 * (v[:-1, :] + v[1:, :])
        fn = vc * _upwind(vc, v[:-1, :], v[1:, :])
        ue = 0.5 * (u[:-1, :] + u[1:, :])                   # (ny-1, nx+1) at nodes
        vg = np.hstack([v[1:-1, :1], v[1:-1, :], v[1:-1, -1:]])
        fe = ue * _upwind(ue, vg[:, :-1], vg[:, 1:])
        conv = (fn[1:, :] - fn[:-1, :]) / dy + (fe[:, 1:] - fe[:, :-1]) / dx
        v_new[1:-1, :] = v[1:-1, :] - dt * conv - dt * (p[1:, :] - p[:-1, :]) / dy

    return VelocityField(u_new, v_new)
