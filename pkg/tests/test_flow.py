import numpy as np
import pytest

from poroheat.flow import (VelocityField, cell_divergence, check_divergence_free, constant_field,
                           ns_explicit_euler_step, streamfunction_field)
from poroheat.grid import build_grid, face_fluxes
from poroheat.transport_fv import assemble_convection_upwind


@pytest.fixture
def grid():
    return build_grid(6, 5, (0, 3, 0, 2.5))


def test_uniform_field_unchanged(grid):
    f = constant_field(grid, (0.3, -0.2))
    new = ns_explicit_euler_step(f, np.full((5, 6), 2.0), 0.1, grid)
    assert np.array_equal(new.u, f.u) and np.array_equal(new.v, f.v)


def test_pressure_gradient_acceleration(grid):
    f = constant_field(grid, (0.0, 0.0))
    xc = grid.cell_centers()[0].reshape(5, 6)
    new = ns_explicit_euler_step(f, xc, 0.1, grid)
    assert np.allclose(new.u[:, 1:-1], -0.1)
    assert np.all(new.u[:, [0, -1]] == 0.0)
    assert np.allclose(new.v, 0.0)


def test_layered_velocity_stays_solenoidal():
    g = build_grid(8, 8, (0, 100, 0, 100))
    f = constant_field(g, (0.0, 4e-3))
    new = ns_explicit_euler_step(f, np.ones((8, 8)), 10.0, g)
    assert np.array_equal(new.v, f.v)
    assert check_divergence_free(new, g) == 0.0


def test_linear_expansion_divergence():
    g = build_grid(4, 1, (0, 2, 0, 1))
    u = np.arange(5, dtype=float)[None, :]
    f = VelocityField(u, np.zeros((2, 4)))
    assert np.allclose(cell_divergence(f, g), 1.0 / g.dx)


def test_streamfunction_divergence_free(grid):
    psi = np.random.default_rng(3).standard_normal((6, 7))
    f = streamfunction_field(grid, psi)
    assert check_divergence_free(f, grid) <= 1e-12


def test_boundary_values_preserved(grid):
    rng = np.random.default_rng(0)
    psi = rng.standard_normal((6, 7))
    f = streamfunction_field(grid, psi)
    new = ns_explicit_euler_step(f, rng.standard_normal((5, 6)), 0.01, grid)
    assert np.array_equal(new.u[:, [0, -1]], f.u[:, [0, -1]])
    assert np.array_equal(new.v[[0, -1], :], f.v[[0, -1], :])


def test_rejects_non_staggered(grid):
    with pytest.raises(TypeError):
        ns_explicit_euler_step(np.zeros((5, 6, 2)), np.zeros((5, 6)), 0.1, grid)


def test_bad_shapes(grid):
    with pytest.raises(ValueError):
        VelocityField(np.zeros((5, 6)), np.zeros((6, 6)))
    with pytest.raises(ValueError):
        streamfunction_field(grid, np.zeros((5, 6)))


def test_solenoidal_transport_keeps_constant(grid):
    # closed box: zero streamfunction on the boundary nodes
    psi = np.zeros((6, 7))
    psi[1:-1, 1:-1] = np.random.default_rng(1).standard_normal((4, 5))
    f = streamfunction_field(grid, psi)
    op, affine = assemble_convection_upwind(grid, face_fluxes(grid, f))
    c = np.full(grid.n_cells, 3.7)
    assert np.max(np.abs(op @ c + affine)) < 1e-12
