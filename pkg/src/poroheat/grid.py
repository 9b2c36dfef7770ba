"""Structured Cartesian finite-volume grid and face fluxes.

Cells are numbered ``j = iy * nx + ix``. Interior faces are stored once,
oriented from the lower to the higher cell index, so a flux seen from the
other side is the exact negation of the stored value. Boundary faces are
stored with an outward normal.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

SIDES = ("left", "right", "bottom", "top")


class BoundaryTag(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN_ZERO = "neumann"
    OUTFLOW = "outflow"


def _as_tag(value) -> BoundaryTag:
    if isinstance(value, BoundaryTag):
        return value
    try:
        return BoundaryTag(str(value).lower())
    except ValueError:
        raise ValueError(f"unknown boundary tag {value!r}; "
                         f"expected one of {[t.value for t in BoundaryTag]}") from None


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)
    boundary_tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"cell counts must be >= 1, got nx={self.nx}, ny={self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError(f"cell widths must be positive, got dx={self.dx}, dy={self.dy}")
        tags = {side: BoundaryTag.NEUMANN_ZERO for side in SIDES}
        for side, tag in dict(self.boundary_tags).items():
            if side not in SIDES:
                raise ValueError(f"unknown boundary side {side!r}")
            tags[side] = _as_tag(tag)
        object.__setattr__(self, "boundary_tags", tags)
        self._build_topology()

    def _build_topology(self):
        nx, ny = self.nx, self.ny
        idx = np.arange(nx * ny).reshape(ny, nx)

        # vertical faces (x-normal) first, then horizontal faces (y-normal)
        v_lo = idx[:, :-1].ravel()
        h_lo = idx[:-1, :].ravel()
        lo = np.concatenate([v_lo, h_lo])
        hi = np.concatenate([v_lo + 1, h_lo + nx])
        axis = np.concatenate([np.zeros(v_lo.size, int), np.ones(h_lo.size, int)])
        area = np.where(axis == 0, self.dy, self.dx)
        dist = np.where(axis == 0, self.dx, self.dy)

        b_cell, b_side, b_axis, b_sign = [], [], [], []
        for side, cells, ax, sign in (
            ("left", idx[:, 0], 0, -1.0),
            ("right", idx[:, -1], 0, 1.0),
            ("bottom", idx[0, :], 1, -1.0),
            ("top", idx[-1, :], 1, 1.0),
        ):
            b_cell.append(cells)
            b_side.extend([side] * cells.size)
            b_axis.append(np.full(cells.size, ax))
            b_sign.append(np.full(cells.size, sign))
        b_axis = np.concatenate(b_axis)

        for name, arr in (
            ("face_lo", lo), ("face_hi", hi), ("face_axis", axis),
            ("face_area", area), ("face_dist", dist),
            ("bface_cell", np.concatenate(b_cell)),
            ("bface_side", np.array(b_side)),
            ("bface_axis", b_axis),
            ("bface_sign", np.concatenate(b_sign)),
            ("bface_area", np.where(b_axis == 0, self.dy, self.dx)),
            ("bface_dist", np.where(b_axis == 0, 0.5 * self.dx, 0.5 * self.dy)),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_interior_faces(self) -> int:
        return self.face_lo.size

    @property
    def n_boundary_faces(self) -> int:
        return self.bface_cell.size

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy

    @property
    def volumes(self) -> np.ndarray:
        return np.full(self.n_cells, self.dx * self.dy)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, x0 + self.nx * self.dx, y0, y0 + self.ny * self.dy)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened x and y coordinates of the cell centres."""
        x0, y0 = self.origin
        xc = x0 + (np.arange(self.nx) + 0.5) * self.dx
        yc = y0 + (np.arange(self.ny) + 0.5) * self.dy
        X, Y = np.meshgrid(xc, yc)
        return X.ravel(), Y.ravel()

    def locate(self, x: float, y: float) -> int:
        """Index of the cell containing the point (x, y)."""
        x0, x1, y0, y1 = self.extent
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            raise ValueError(f"point ({x}, {y}) lies outside the grid")
        ix = min(int((x - x0) / self.dx), self.nx - 1)
        iy = min(int((y - y0) / self.dy), self.ny - 1)
        return iy * self.nx + ix

    def side_faces(self, side: str) -> np.ndarray:
        """Boundary-face indices on one side, ordered along the side."""
        return np.flatnonzero(self.bface_side == side)

    def faces_tagged(self, tag) -> np.ndarray:
        tag = _as_tag(tag)
        sides = [s for s in SIDES if self.boundary_tags[s] is tag]
        return np.flatnonzero(np.isin(self.bface_side, sides))


def build_grid(nx: int, ny: int, domain=(0.0, 1.0, 0.0, 1.0), boundary_spec=None) -> StructuredGrid:
    """Uniform grid covering ``domain = (xmin, xmax, ymin, ymax)``.

    ``boundary_spec`` maps side names to tags; unspecified sides are
    zero-Neumann walls.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    xmin, xmax, ymin, ymax = map(float, domain)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"domain must have positive extents, got {domain}")
    return StructuredGrid(
        nx=int(nx), ny=int(ny),
        dx=(xmax - xmin) / nx, dy=(ymax - ymin) / ny,
        origin=(xmin, ymin),
        boundary_tags=dict(boundary_spec or {}),
    )


@dataclass(frozen=True, eq=False)
class FaceFlux:
    """Volumetric fluxes ``v_jk = |face| * (n . v)``.

    ``interior`` is oriented lower -> higher cell index; ``boundary`` is
    positive for outflow.
    """
    grid: StructuredGrid
    interior: np.ndarray
    boundary: np.ndarray

    def seen_from(self, cell: int, face: int) -> float:
        """Flux through interior ``face`` oriented out of ``cell``."""
        if self.grid.face_lo[face] == cell:
            return self.interior[face]
        if self.grid.face_hi[face] == cell:
            return -self.interior[face]
        raise ValueError(f"cell {cell} is not adjacent to face {face}")

    def net_outflow(self) -> np.ndarray:
        """Signed sum of face fluxes per cell (positive = net outflow)."""
        g = self.grid
        net = np.zeros(g.n_cells)
        np.add.at(net, g.face_lo, self.interior)
        np.add.at(net, g.face_hi, -self.interior)
        np.add.at(net, g.bface_cell, self.boundary)
        return net

    def outflow_totals(self) -> np.ndarray:
        """``nu_j`` for all cells at once."""
        g = self.grid
        nu = np.zeros(g.n_cells)
        np.add.at(nu, g.face_lo, np.maximum(self.interior, 0.0))
        np.add.at(nu, g.face_hi, np.maximum(-self.interior, 0.0))
        np.add.at(nu, g.bface_cell, np.maximum(self.boundary, 0.0))
        return nu

    def max_courant(self, dt: float, capacity=1.0) -> float:
        return float(np.max(self.outflow_totals() * dt / (capacity * self.grid.volumes)))


def _staggered_from_cells(grid, vel):
    # cell-centred (ny, nx, 2) -> face normals by arithmetic averaging
    cu, cv = vel[..., 0], vel[..., 1]
    u = np.empty((grid.ny, grid.nx + 1))
    u[:, 1:-1] = 0.5 * (cu[:, :-1] + cu[:, 1:])
    u[:, 0], u[:, -1] = cu[:, 0], cu[:, -1]
    v = np.empty((grid.ny + 1, grid.nx))
    v[1:-1, :] = 0.5 * (cv[:-1, :] + cv[1:, :])
    v[0, :], v[-1, :] = cv[0, :], cv[-1, :]
    return u, v


def face_fluxes(grid: StructuredGrid, velocity) -> FaceFlux:
    """Face fluxes from a constant vector, a staggered field, or cell-centred values.

    Accepted ``velocity`` forms:

    * a length-2 sequence, a uniform velocity;
    * an object with ``u`` of shape (ny, nx+1) and ``v`` of shape (ny+1, nx)
      holding face-normal components (see :class:`poroheat.flow.VelocityField`);
    * an array of shape (ny, nx, 2) with cell-centred vectors.
    """
    nx, ny = grid.nx, grid.ny
    if hasattr(velocity, "u") and hasattr(velocity, "v"):
        u, v = np.asarray(velocity.u, float), np.asarray(velocity.v, float)
        if u.shape != (ny, nx + 1) or v.shape != (ny + 1, nx):
            raise ValueError(f"staggered field shapes {u.shape}, {v.shape} do not match "
                             f"grid ({ny}, {nx + 1}), ({ny + 1}, {nx})")
    else:
        arr = np.asarray(velocity, float)
        if arr.shape == (2,):
            u = np.full((ny, nx + 1), arr[0])
            v = np.full((ny + 1, nx), arr[1])
        elif arr.shape == (ny, nx, 2):
            u, v = _staggered_from_cells(grid, arr)
        else:
            raise ValueError(f"velocity of shape {arr.shape} does not match grid ({ny}, {nx})")

    interior = np.concatenate([u[:, 1:-1].ravel() * grid.dy, v[1:-1, :].ravel() * grid.dx])
    boundary = np.concatenate([
        -u[:, 0] * grid.dy,
        u[:, -1] * grid.dy,
        -v[0, :] * grid.dx,
        v[-1, :] * grid.dx,
    ])
    interior.setflags(write=False)
    boundary.setflags(write=False)
    return FaceFlux(grid, interior, boundary)


def total_outflow(fluxes: FaceFlux, cell: int) -> float:
    """Sum of the positive outgoing fluxes of one cell (boundary faces included)."""
    g = fluxes.grid
    if not 0 <= cell < g.n_cells:
        raise IndexError(f"cell index {cell} out of range [0, {g.n_cells})")
    out = np.maximum(fluxes.interior[g.face_lo == cell], 0.0).sum()
    out += np.maximum(-fluxes.interior[g.face_hi == cell], 0.0).sum()
    out += np.maximum(fluxes.boundary[g.bface_cell == cell], 0.0).sum()
    return float(out)
